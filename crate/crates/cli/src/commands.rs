//! One function per subcommand. Each reads the resolved config, writes its
//! data files through [`Output`] and prints a short report.

use std::io::Write;

use anyhow::Context;
use rand::Rng;
use reldiff::diffusion::{alpha, friction_drift, transverse_frame};
use reldiff::ensemble::keyed_rng;
use reldiff::equilibrium::{flux_residual, juttner_density, reversible_drift, JuttnerParams};
use reldiff::fokker_planck::{
    stationary_profile, MeasureFit, MomentumGrid, RadialProfile, StationaryMethod, StationaryProfile,
};
use reldiff::randomfield::{
    correlation_time, kubo_alpha_estimate, kubo_alpha_time_integrated, CorrelationTime, KuboEstimate,
    TimeIntegratedKubo, TAU_C_DEFINITION,
};
use reldiff::sde::{run_ensemble, stationarity_distance, Initial, StationarityReport};
use reldiff::spectral::{bose_current, energy_density, pressure};
use reldiff::{BathParams, Boost, FourVector, FrictionSign};
use serde::Serialize;

use crate::config::{InitialSpec, RunConfig};
use crate::output::Output;

fn print_tensor(label: &str, m: &[[f64; 4]; 4]) {
    println!("{label}");
    for row in m {
        println!("  [{:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}]", row[0] + 0.0, row[1] + 0.0, row[2] + 0.0, row[3] + 0.0);
    }
}

#[derive(Serialize)]
struct AlphaReport {
    p: FourVector<f64>,
    w: FourVector<f64>,
    energy_density: f64,
    pressure: f64,
    alpha: [[f64; 4]; 4],
    min_eigenvalue: f64,
    /// `p_μ α^{μν}`, zero up to rounding.
    degeneracy: FourVector<f64>,
}

pub fn alpha_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let bath = cfg.resolve_bath()?;
    let p = FourVector(cfg.alpha.p.unwrap_or([1.0, 0.0, 0.0, 0.0]));
    let a = alpha(&p, &bath)?;
    let report = AlphaReport {
        p,
        w: bath.w,
        energy_density: bath.energy_density,
        pressure: bath.pressure,
        alpha: a.tensor().m,
        min_eigenvalue: a.min_eigenvalue(),
        degeneracy: a.tensor().contract(&p.lower()),
    };
    print_tensor("alpha^{mu nu}:", &report.alpha);
    println!("min eigenvalue {:e}", report.min_eigenvalue);
    out.json("alpha.json", &report)?;
    out.csv("alpha.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["mu", "nu", "alpha"])?;
        for (mu, row) in report.alpha.iter().enumerate() {
            for (nu, v) in row.iter().enumerate() {
                c.write_record([mu.to_string(), nu.to_string(), format!("{v:e}")])?;
            }
        }
        c.flush()?;
        Ok(())
    })
}

#[derive(Serialize)]
struct SpectralReport {
    beta: f64,
    energy_density: f64,
    energy_density_error: f64,
    pressure: f64,
    pressure_error: f64,
    /// `ε / π_ε`; 3 for a massless radiation bath.
    ratio: f64,
    /// `λ = β(ε − π_ε)`, the friction used by the dynamics.
    friction: f64,
    /// Friction constant fitted from the thermal current, for comparison.
    r_current: f64,
    current: FourVector<f64>,
}

pub fn spectral_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let g = cfg.spectral_spec().build()?;
    let w = FourVector(cfg.bath.w);
    let eps = energy_density(&g, &w)?;
    let pi = pressure(&g, &w)?;
    let beta = cfg.bath.beta;
    let current = bose_current(beta, &w)?;
    let report = SpectralReport {
        beta,
        energy_density: eps.value,
        energy_density_error: eps.error,
        pressure: pi.value,
        pressure_error: pi.error,
        ratio: eps.value / pi.value,
        friction: beta * (eps.value - pi.value),
        r_current: current.r,
        current: current.current,
    };
    println!("epsilon   {:.10e} (± {:.1e})", report.energy_density, report.energy_density_error);
    println!("pi_eps    {:.10e} (± {:.1e})", report.pressure, report.pressure_error);
    println!("ratio     {:.10}", report.ratio);
    println!("lambda    {:.10e}", report.friction);
    println!("r_current {:.10e}", report.r_current);
    out.json("spectral.json", &report)?;
    Ok(())
}

fn stationary_reference(
    cfg: &RunConfig,
    bath: &BathParams<f64>,
    mass: f64,
    cells: usize,
) -> reldiff::Result<(MomentumGrid, StationaryProfile)> {
    // The radial solve lives in the bath rest frame.
    let rest = bath.with_frame(FourVector::at_rest(1.0))?;
    let grid = match cfg.grid.p_max {
        Some(p_max) => MomentumGrid::radial(mass, p_max, cells)?,
        None => MomentumGrid::radial_for(mass, bath.beta, cells)?,
    };
    let prof = stationary_profile(&grid, &rest, cfg.grid.tol, cfg.grid.method)?;
    Ok((grid, prof))
}

pub fn simulate_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let bath = cfg.resolve_bath()?;
    let mut sim = cfg.sim.run.clone();
    sim.seed = cfg.seed;
    sim.advection = cfg.advection;
    cfg.sim.run = sim.clone();
    let mass = cfg.sim.mass;
    let reference = match stationary_reference(cfg, &bath, mass, cfg.sim.reference_cells) {
        Ok((grid, prof)) => Some(RadialProfile::from_state(&grid, &prof.state)?),
        Err(e) => {
            log::warn!("no stationary reference profile: {e}");
            None
        }
    };
    let init = match &cfg.sim.initial {
        InitialSpec::Delta { p } => Initial::Delta { mass, p: *p },
        InitialSpec::Stationary => Initial::Profile(
            reference
                .clone()
                .ok_or_else(|| reldiff::Error::InvalidArgument("stationary start needs a reference profile".into()))?,
        ),
    };
    let result = run_ensemble(&sim, &bath, &init)?;
    let report: Option<StationarityReport> = match &reference {
        Some(r) => Some(stationarity_distance(&result.radial, mass, &bath, r)?),
        None => None,
    };
    if let (Some(first), Some(last)) = (result.series.first(), result.series.last()) {
        println!("mean |p|: {:.6} -> {:.6} (± {:.1e})", first.mean_p, last.mean_p, last.mean_p_se);
    }
    if let Some(r) = &report {
        println!("stationarity L1 distance {:.4}, fitted beta {:.4}", r.distance, r.fitted_beta);
        for c in &r.candidates {
            println!(
                "  candidate {:<10} L1 {:.4} at bath beta, {:.4} at fitted beta {:.4}",
                c.measure.as_str(),
                c.l1_at_bath_beta,
                c.l1_at_fitted_beta,
                c.fitted_beta
            );
        }
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    out.json("ensemble.json", &result)?;
    out.json("stationarity.json", &report)?;
    out.csv("series.csv", |w| result.write_series_csv(w))?;
    out.csv("radial.csv", |w| result.radial.write_csv(w))?;
    out.csv("cube.csv", |w| result.cube.write_csv(w))?;
    Ok(())
}

#[derive(Serialize)]
struct KuboRow {
    momentum: [f64; 3],
    small_tau: KuboEstimate,
    integrated: Option<TimeIntegratedKubo>,
    correlation_time: Option<CorrelationTime>,
}

#[derive(Serialize)]
struct KuboReport {
    tau_c_definition: &'static str,
    rows: Vec<KuboRow>,
}

pub fn kubo_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let g = cfg.spectral_spec().build()?;
    let w = FourVector(cfg.bath.w);
    let to_lab = Boost::from_rest_of(&w)?;
    let k = &mut cfg.kubo;
    k.run.seed = cfg.seed;
    let mut rows = Vec::new();
    for sp in &k.momenta {
        let p = to_lab.apply(&FourVector::on_shell(k.mass, *sp));
        let small = kubo_alpha_estimate(&g, &p, &w, k.tau, &k.run)?;
        let (integrated, tau_c) = match k.s_max {
            Some(s) => {
                let int = kubo_alpha_time_integrated(&g, &p, &w, s, k.coherence, &k.run)?;
                let tc = correlation_time(&small, &int);
                (Some(int), Some(tc))
            }
            None => (None, None),
        };
        println!(
            "p = {:?}: relative MC error {:.3e}{}",
            sp,
            small.relative_error,
            if small.within_tolerance { "" } else { " (above tolerance)" }
        );
        println!("  {:>3} {:>3} {:>14} {:>14} {:>11} {:>7}", "mu", "nu", "estimate", "analytic", "std err", "z");
        let z = small.z_scores();
        for mu in 0..4 {
            for nu in mu..4 {
                println!(
                    "  {mu:>3} {nu:>3} {:>14.6e} {:>14.6e} {:>11.3e} {:>7.2}",
                    small.tensor.m[mu][nu], small.analytic.m[mu][nu], small.std_err.m[mu][nu], z[mu][nu]
                );
            }
        }
        if let Some(tc) = &tau_c {
            println!("  tau_c = {:.6e} ± {:.1e}", tc.tau_c, tc.std_err);
        }
        rows.push(KuboRow {
            momentum: *sp,
            small_tau: small,
            integrated,
            correlation_time: tau_c,
        });
    }
    out.csv("kubo.csv", |wr| {
        let mut c = csv::Writer::from_writer(wr);
        c.write_record(["px", "py", "pz", "mu", "nu", "estimate", "analytic", "std_err", "z"])?;
        for r in &rows {
            let z = r.small_tau.z_scores();
            for mu in 0..4 {
                for nu in 0..4 {
                    c.write_record([
                        format!("{:e}", r.momentum[0]),
                        format!("{:e}", r.momentum[1]),
                        format!("{:e}", r.momentum[2]),
                        mu.to_string(),
                        nu.to_string(),
                        format!("{:e}", r.small_tau.tensor.m[mu][nu]),
                        format!("{:e}", r.small_tau.analytic.m[mu][nu]),
                        format!("{:e}", r.small_tau.std_err.m[mu][nu]),
                        format!("{:e}", z[mu][nu]),
                    ])?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })?;
    out.json(
        "kubo.json",
        &KuboReport {
            tau_c_definition: TAU_C_DEFINITION,
            rows,
        },
    )
}

#[derive(Serialize)]
struct Refinement {
    cells: [usize; 3],
    /// Largest CDF change between successive refinements.
    changes: [f64; 2],
    order: f64,
}

#[derive(Serialize)]
struct FpReport {
    cells: usize,
    p_max: f64,
    method: StationaryMethod,
    max_relative_flux: f64,
    l1_rate: f64,
    fits: Vec<MeasureFit>,
    refinement: Option<Refinement>,
}

pub fn fokker_planck_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let bath = cfg.resolve_bath()?;
    let n = cfg.grid.cells;
    let (grid, prof) = stationary_reference(cfg, &bath, cfg.grid.mass, n)?;
    let refinement = if cfg.grid.refine {
        let profile = RadialProfile::from_state(&grid, &prof.state)?;
        // Coarse-grid edges are edges of every refined grid, so the CDF there
        // carries no interpolation error.
        let probes: Vec<f64> = (1..16).map(|k| profile.edges[k * n / 16]).collect();
        let mut cdfs = vec![probes.iter().map(|q| profile.cdf(*q)).collect::<Vec<_>>()];
        for f in [2, 4] {
            let (g2, p2) = stationary_reference(cfg, &bath, cfg.grid.mass, f * n)?;
            let r = RadialProfile::from_state(&g2, &p2.state)?;
            cdfs.push(probes.iter().map(|q| r.cdf(*q)).collect());
        }
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let changes = [diff(&cdfs[0], &cdfs[1]), diff(&cdfs[1], &cdfs[2])];
        Some(Refinement {
            cells: [n, 2 * n, 4 * n],
            changes,
            order: (changes[0] / changes[1]).log2(),
        })
    } else {
        None
    };
    let report = FpReport {
        cells: n,
        p_max: grid.p_max,
        method: prof.method,
        max_relative_flux: prof.max_relative_flux,
        l1_rate: prof.l1_rate,
        fits: prof.fits.clone(),
        refinement,
    };
    println!("stationary profile: {} cells up to |p| = {:.4}", n, grid.p_max);
    println!("max relative face flux {:.2e}, L1 rate {:.2e}", report.max_relative_flux, report.l1_rate);
    for f in &report.fits {
        println!(
            "  candidate {:<10} fitted beta {:.6}, L1 {:.3e} at bath beta, {:.3e} at fitted",
            f.measure.as_str(),
            f.fitted_beta,
            f.l1_at_bath_beta,
            f.l1_at_fitted_beta
        );
    }
    if let Some(r) = &report.refinement {
        println!("  refinement order {:.3} (changes {:.2e}, {:.2e})", r.order, r.changes[0], r.changes[1]);
    }
    out.csv("profile.csv", |w| prof.state.write_csv(&grid, w))?;
    if !prof.history.is_empty() {
        out.csv("history.csv", |w| {
            writeln!(w, "chunk,l1_rate")?;
            for (i, h) in prof.history.iter().enumerate() {
                writeln!(w, "{i},{h:e}")?;
            }
            Ok(())
        })?;
    }
    out.json("fits.json", &report)
}

#[derive(Serialize)]
struct CheckSummary {
    friction_sign: FrictionSign,
    samples: usize,
    /// Largest `|flux residual| / (|α| β |w| Ω)`.
    max_flux_residual: f64,
    /// Largest `|reversible − friction| / (|α| β |w|)`.
    max_drift_mismatch: f64,
    /// Flux residual of the first sample, taken with `p ∥ w`.
    comoving_residual: f64,
}

pub fn equilibrium_check_cmd(cfg: &mut RunConfig, out: &mut Output) -> anyhow::Result<()> {
    let base = cfg.resolve_bath()?;
    let c = cfg.check.clone();
    if c.samples == 0 || !(c.mass[0] > 0.0) || !(c.mass[1] >= c.mass[0]) {
        anyhow::bail!(crate::UsageError("check needs samples ≥ 1 and 0 < mass[0] ≤ mass[1]".into()));
    }
    let mut rng = keyed_rng(cfg.seed, 0);
    let mut rows = Vec::with_capacity(c.samples);
    for i in 0..c.samples {
        let ct: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let st = (1.0 - ct * ct).sqrt();
        let eta: f64 = rng.random_range(0.0..c.rapidity.max(0.0) + f64::MIN_POSITIVE);
        let w = FourVector::unit_with_rapidity([st * phi.cos(), st * phi.sin(), ct], eta);
        let m = c.mass[0] * (c.mass[1] / c.mass[0]).powf(rng.random::<f64>());
        let sp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-c.p_range..c.p_range) * m);
        let p = if i == 0 { w.scale(m) } else { FourVector::on_shell(m, sp) };
        let bath = base.with_frame(w)?;
        // Normalized so that Ω = 1 at the sample point.
        let j = JuttnerParams::for_bath(&bath)?.with_log_normalization(bath.beta * w.dot(&p));
        let omega = juttner_density(&p, &j);
        let a = alpha(&p, &bath)?;
        let scale = (a.tensor().max_abs() * bath.beta * w.max_abs() * omega).max(f64::MIN_POSITIVE);
        let r = flux_residual(&p, &bath, &j)?;
        let rev = reversible_drift(&p, &bath, &j)?;
        let fric = friction_drift(&p, &bath)?;
        let what = transverse_frame(&p, &w)?.max_abs();
        rows.push([
            m,
            p[0],
            p[1],
            p[2],
            p[3],
            r.max_abs() / scale,
            (rev - fric).max_abs() * omega / scale,
            what,
        ]);
    }
    let summary = CheckSummary {
        friction_sign: base.friction_sign,
        samples: c.samples,
        max_flux_residual: rows.iter().map(|r| r[5]).fold(0.0, f64::max),
        max_drift_mismatch: rows.iter().map(|r| r[6]).fold(0.0, f64::max),
        comoving_residual: rows[0][5],
    };
    println!("friction sign          {}", base.friction_sign.as_str());
    println!("max flux residual      {:.3e} (relative)", summary.max_flux_residual);
    println!("max drift mismatch     {:.3e} (relative)", summary.max_drift_mismatch);
    println!("comoving sample        {:.3e}", summary.comoving_residual);
    out.csv("residuals.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["mass", "p0", "p1", "p2", "p3", "flux_residual", "drift_mismatch", "w_hat"])?;
        for r in &rows {
            c.write_record(r.iter().map(|x| format!("{x:e}")))?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.json("summary.json", &summary).context("writing summary")
}
