//! Euler–Maruyama simulation of the momentum diffusion and ensemble
//! statistics in the bath rest frame.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conventions::Advection;
use crate::diffusion::{alpha, default_step, ito_drift, noise_factor};
use crate::ensemble::{keyed_rng, par_reduce};
use crate::equilibrium::ShellMeasure;
use crate::error::{Error, Result};
use crate::fokker_planck::RadialProfile;
use crate::minkowski::{Boost, FourVector};
use crate::scalar::Real;
use crate::spectral::BathParams;

/// Position and momentum of one particle; `mass` caches `√(p·p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint<T> {
    pub x: FourVector<T>,
    pub p: FourVector<T>,
    pub mass: T,
}

impl<T: Real> PhasePoint<T> {
    pub fn new(x: FourVector<T>, p: FourVector<T>) -> Result<Self> {
        let p2 = p.norm_sq();
        if !(p2 > T::zero()) {
            return Err(Error::OffShell(p2.to_f64_lossy()));
        }
        Ok(PhasePoint { x, p, mass: p2.sqrt() })
    }

    /// Particle at the origin with spatial momentum `p` on the shell `m`.
    pub fn on_shell(m: T, p: [T; 3]) -> Result<Self> {
        Self::new(FourVector::zero(), FourVector::on_shell(m, p))
    }

    pub fn validate(&self) -> Result<()> {
        let p2 = self.p.norm_sq();
        if !(p2 > T::zero()) {
            return Err(Error::OffShell(p2.to_f64_lossy()));
        }
        let m = p2.sqrt();
        if (m - self.mass).abs() > T::tol(1e-12) * m {
            return Err(Error::invariant("cached mass", format!("cached {} vs √p² = {m}", self.mass)));
        }
        Ok(())
    }
}

/// What is done to `p` after each step to undo discretization drift off the
/// mass shell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// Keep `p⁰`, rescale the spatial part.
    RescaleSpatial,
    /// Keep the spatial part, recompute `p⁰` with its previous sign.
    #[default]
    ResolveP0,
    Off,
}

/// Step options shared by [`em_step`] and [`run_ensemble`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub projection: Projection,
    pub advection: Advection,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            projection: Projection::ResolveP0,
            advection: Advection::Velocity,
        }
    }
}

/// One Euler–Maruyama step of size `dς` driven by three standard normals.
///
/// The momentum update is `τ_c D dς + σ ξ √(τ_c dς)` with `D` the Itô drift
/// and `σσᵀ = 2α`; the position is advanced with the pre-step momentum.
///
/// Friction relaxes the bath-frame momentum at the rate `τ_c λ (w·p)/m²`;
/// steps longer than its inverse overshoot and are refused with
/// [`Error::Stability`].
pub fn em_step<T: Real>(
    state: &PhasePoint<T>,
    bath: &BathParams<T>,
    dt: T,
    noise: &[T; 3],
    opts: &StepOptions,
) -> Result<PhasePoint<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {dt}")));
    }
    let p = state.p;
    let tc = bath.tau_c;
    let m = state.mass;
    let stiffness = tc * bath.friction * bath.w.dot(&p).abs() / (m * m) * dt;
    if stiffness > T::one() {
        return Err(Error::Stability {
            dt: dt.to_f64_lossy(),
            suggested: (T::lit(0.5) * dt / stiffness).to_f64_lossy(),
        });
    }
    let a = alpha(&p, bath)?;
    let sigma = noise_factor(&a)?;
    let drift = ito_drift(&p, bath, default_step(&p))?.drift;
    let mut q = p + drift.scale(tc * dt) + sigma.apply(noise).scale((tc * dt).sqrt());
    // Resolving p⁰ cannot fail, so only the other modes need p² > 0.
    let q2 = q.norm_sq();
    if opts.projection != Projection::ResolveP0 && !(q2 > T::zero()) {
        return Err(Error::StepRejected(format!("p² = {q2} after an update of size {dt}")));
    }
    match opts.projection {
        Projection::Off => {}
        Projection::ResolveP0 => {
            let s = q.spatial();
            let e = (m * m + s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
            q[0] = if p[0] < T::zero() { -e } else { e };
        }
        Projection::RescaleSpatial => {
            let target = q[0] * q[0] - m * m;
            let norm = q.spatial_norm();
            if !(target >= T::zero()) || !(norm > T::zero()) {
                return Err(Error::StepRejected(format!(
                    "|p⁰| = {} below the mass {m}; spatial rescaling impossible",
                    q[0].abs()
                )));
            }
            let f = target.sqrt() / norm;
            for i in 1..4 {
                q[i] *= f;
            }
        }
    }
    let v = match opts.advection {
        Advection::Velocity => p.scale(T::one() / m),
        Advection::Momentum => p,
    };
    let mass = match opts.projection {
        Projection::Off => q.norm_sq().sqrt(),
        _ => m,
    };
    Ok(PhasePoint {
        x: state.x + v.scale(dt),
        p: q,
        mass,
    })
}

/// Ensemble run configuration. Times are in units of the evolution
/// parameter `ς`; lengths of runs in steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    pub ensemble: usize,
    pub seed: u64,
    pub projection: Projection,
    pub advection: Advection,
    /// Moment time series cadence in steps.
    pub record_every: usize,
    /// Steps before histogram accumulation starts.
    pub burn_in: usize,
    /// Histogram sampling cadence in steps.
    pub sample_every: usize,
    pub hist_bins: usize,
    /// Upper edge of the radial histogram; defaults to the `β(p⁰ − m) = 40`
    /// point.
    pub hist_p_max: Option<f64>,
    /// Bins per axis of the 3D histogram over `[−p_max, p_max]³`.
    pub cube_bins: usize,
    /// Replaces the bath's `τ_c` when set.
    pub tau_c: Option<f64>,
    /// Step halvings allowed after a rejected step.
    pub max_halvings: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.005,
            steps: 2000,
            ensemble: 1000,
            seed: 0,
            projection: Projection::ResolveP0,
            advection: Advection::Velocity,
            record_every: 20,
            burn_in: 0,
            sample_every: 10,
            hist_bins: 40,
            hist_p_max: None,
            cube_bins: 16,
            tau_c: None,
            max_halvings: 8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.ensemble == 0 {
            return Err(Error::InvalidArgument(format!(
                "need dς > 0 and ensemble ≥ 1, got dς = {}, ensemble = {}",
                self.dt, self.ensemble
            )));
        }
        if self.record_every == 0 || self.sample_every == 0 || self.hist_bins == 0 || self.cube_bins == 0 {
            return Err(Error::InvalidArgument("cadences and bin counts must be ≥ 1".into()));
        }
        if let Some(t) = self.tau_c {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("τ_c override must be > 0, got {t}")));
            }
        }
        Ok(())
    }

    fn step_options(&self) -> StepOptions {
        StepOptions {
            projection: self.projection,
            advection: self.advection,
        }
    }
}

/// Initial distribution of the ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Initial {
    /// Every particle at the origin with bath-frame spatial momentum `p`.
    Delta { mass: f64, p: [f64; 3] },
    /// Isotropic in the bath frame with `|p|` drawn from a profile.
    Profile(RadialProfile),
}

impl Initial {
    fn mass(&self) -> f64 {
        match self {
            Initial::Delta { mass, .. } => *mass,
            Initial::Profile(r) => r.mass,
        }
    }

    fn sample(&self, to_lab: &Boost<f64>, rng: &mut impl Rng) -> Result<PhasePoint<f64>> {
        let (m, p) = match self {
            Initial::Delta { mass, p } => (*mass, *p),
            Initial::Profile(r) => {
                let q = r.quantile(rng.random::<f64>());
                let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
                let phi = std::f64::consts::TAU * rng.random::<f64>();
                let s = (1.0 - z * z).max(0.0).sqrt();
                (r.mass, [q * s * phi.cos(), q * s * phi.sin(), q * z])
            }
        };
        PhasePoint::new(FourVector::zero(), to_lab.apply(&FourVector::on_shell(m, p)))
    }
}

/// Radial histogram of bath-frame `|p|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples beyond the last edge.
    pub overflow: u64,
    /// Estimate of the number of statistically independent samples.
    pub effective_samples: f64,
}

impl RadialHistogram {
    pub fn new(p_max: f64, bins: usize) -> Self {
        RadialHistogram {
            edges: (0..=bins).map(|i| p_max * i as f64 / bins as f64).collect(),
            counts: vec![0; bins],
            overflow: 0,
            effective_samples: 0.0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    fn insert(&mut self, q: f64) {
        let bins = self.counts.len();
        let k = (q / self.edges[bins] * bins as f64) as usize;
        if k < bins {
            self.counts[k] += 1;
        } else {
            self.overflow += 1;
        }
    }

    fn merge(&mut self, o: &Self) {
        self.counts.iter_mut().zip(&o.counts).for_each(|(a, b)| *a += b);
        self.overflow += o.overflow;
    }

    /// Probability per bin, overflow counted as its own bin.
    pub fn probabilities(&self) -> (Vec<f64>, f64) {
        let n = self.total().max(1) as f64;
        (self.counts.iter().map(|c| *c as f64 / n).collect(), self.overflow as f64 / n)
    }

    /// Histogram built from exact bin masses of a profile, as if it had `n`
    /// samples (rounded).
    pub fn from_profile(profile: &RadialProfile, p_max: f64, bins: usize, n: u64) -> Self {
        let mut h = Self::new(p_max, bins);
        for k in 0..bins {
            h.counts[k] = (profile.mass_between(h.edges[k], h.edges[k + 1]) * n as f64).round() as u64;
        }
        h.overflow = ((1.0 - profile.cdf(p_max)) * n as f64).round() as u64;
        h.effective_samples = n as f64;
        h
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p_lo", "p_hi", "count", "density"])?;
        let n = self.total().max(1) as f64;
        for (k, c) in self.counts.iter().enumerate() {
            let (a, b) = (self.edges[k], self.edges[k + 1]);
            w.write_record([
                format!("{a:e}"),
                format!("{b:e}"),
                c.to_string(),
                format!("{:e}", *c as f64 / (n * (b - a))),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of the bath-frame spatial momentum on `[−p_max, p_max]³`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeHistogram {
    pub p_max: f64,
    pub bins: usize,
    /// Index `(i·bins + j)·bins + k` for `(p_x, p_y, p_z)` bins.
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl CubeHistogram {
    pub fn new(p_max: f64, bins: usize) -> Self {
        CubeHistogram {
            p_max,
            bins,
            counts: vec![0; bins * bins * bins],
            outside: 0,
        }
    }

    fn insert(&mut self, p: [f64; 3]) {
        let n = self.bins;
        let idx: Vec<Option<usize>> = p
            .iter()
            .map(|x| {
                let t = (x + self.p_max) / (2.0 * self.p_max) * n as f64;
                (t >= 0.0 && t < n as f64).then_some(t as usize)
            })
            .collect();
        match (idx[0], idx[1], idx[2]) {
            (Some(i), Some(j), Some(k)) => self.counts[(i * n + j) * n + k] += 1,
            _ => self.outside += 1,
        }
    }

    fn merge(&mut self, o: &Self) {
        self.counts.iter_mut().zip(&o.counts).for_each(|(a, b)| *a += b);
        self.outside += o.outside;
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["px", "py", "pz", "count"])?;
        let n = self.bins;
        let h = 2.0 * self.p_max / n as f64;
        let c = |i: usize| format!("{:e}", -self.p_max + (i as f64 + 0.5) * h);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    w.write_record([c(i), c(j), c(k), self.counts[(i * n + j) * n + k].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Ensemble moments at one recorded time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub step: usize,
    /// Evolution parameter `ς`.
    pub time: f64,
    /// Mean laboratory time `⟨x⁰⟩`.
    pub lab_time: f64,
    /// Bath-frame `⟨|p|⟩` and its standard error.
    pub mean_p: f64,
    pub mean_p_se: f64,
    /// Bath-frame `⟨p·w⟩`.
    pub mean_energy: f64,
    pub mean_energy_se: f64,
    pub mean_p_sq: f64,
    pub mean_p_sq_se: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct MomentSums {
    n: f64,
    x0: f64,
    p: [f64; 2],
    e: [f64; 2],
    p_sq: [f64; 2],
}

impl MomentSums {
    fn add(&mut self, x0: f64, q: f64, e: f64) {
        self.n += 1.0;
        self.x0 += x0;
        self.p[0] += q;
        self.p[1] += q * q;
        self.e[0] += e;
        self.e[1] += e * e;
        self.p_sq[0] += q * q;
        self.p_sq[1] += q.powi(4);
    }

    fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.x0 += o.x0;
        for k in 0..2 {
            self.p[k] += o.p[k];
            self.e[k] += o.e[k];
            self.p_sq[k] += o.p_sq[k];
        }
    }

    fn record(&self, step: usize, dt: f64) -> MomentRecord {
        let n = self.n;
        let stat = |s: [f64; 2]| {
            let mean = s[0] / n;
            let var = (s[1] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            (mean, (var / n).sqrt())
        };
        let (mean_p, mean_p_se) = stat(self.p);
        let (mean_energy, mean_energy_se) = stat(self.e);
        let (mean_p_sq, mean_p_sq_se) = stat(self.p_sq);
        MomentRecord {
            step,
            time: step as f64 * dt,
            lab_time: self.x0 / n,
            mean_p,
            mean_p_se,
            mean_energy,
            mean_energy_se,
            mean_p_sq,
            mean_p_sq_se,
        }
    }
}

/// Ensemble output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config: SimConfig,
    pub tau_c: f64,
    pub series: Vec<MomentRecord>,
    pub radial: RadialHistogram,
    pub cube: CubeHistogram,
    pub rejected_steps: u64,
    /// Largest `|p² − m²| / m²` over particles at the end of the run.
    pub max_mass_drift: f64,
    /// `max_mass_drift` per unit `ς`.
    pub mass_drift_rate: f64,
    pub low_confidence: bool,
    pub warnings: Vec<String>,
}

/// Histograms with fewer effective samples are flagged.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 1e4;

impl EnsembleResult {
    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn write_series_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.series {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Accum {
    moments: Vec<MomentSums>,
    radial: RadialHistogram,
    cube: CubeHistogram,
    rejected: u64,
    max_drift: f64,
}

/// Runs `config.ensemble` independent particles; particle `i` draws from
/// stream `i` of `config.seed`, so the result does not depend on the number
/// of threads.
pub fn run_ensemble(config: &SimConfig, bath: &BathParams<f64>, init: &Initial) -> Result<EnsembleResult> {
    config.validate()?;
    let mut bath = *bath;
    if let Some(t) = config.tau_c {
        bath.tau_c = t;
    }
    bath.validate()?;
    let to_lab = Boost::from_rest_of(&bath.w)?;
    let to_bath = to_lab.inverse();
    let m = init.mass();
    let p_max = config
        .hist_p_max
        .unwrap_or_else(|| crate::fokker_planck::MomentumGrid::cutoff(m, bath.beta));
    let records = config.steps / config.record_every + 1;
    let opts = config.step_options();

    let acc = par_reduce(
        config.ensemble,
        || Accum {
            moments: vec![MomentSums::default(); records],
            radial: RadialHistogram::new(p_max, config.hist_bins),
            cube: CubeHistogram::new(p_max, config.cube_bins),
            rejected: 0,
            max_drift: 0.0,
        },
        |i, acc| {
            let mut rng = keyed_rng(config.seed, i as u64);
            let mut s = init.sample(&to_lab, &mut rng)?;
            let m0 = s.mass;
            let observe = |s: &PhasePoint<f64>| {
                let pb = to_bath.apply(&s.p);
                (pb.spatial(), pb[0])
            };
            for step in 0..=config.steps {
                if step > 0 {
                    s = advance(&s, &bath, config.dt, &opts, config.max_halvings, &mut rng, &mut acc.rejected)?;
                }
                let (pb, e) = observe(&s);
                let q = (pb[0] * pb[0] + pb[1] * pb[1] + pb[2] * pb[2]).sqrt();
                if step % config.record_every == 0 {
                    acc.moments[step / config.record_every].add(s.x[0], q, e);
                }
                if step >= config.burn_in && (step - config.burn_in) % config.sample_every == 0 {
                    acc.radial.insert(q);
                    acc.cube.insert(pb);
                }
            }
            acc.max_drift = acc.max_drift.max((s.p.norm_sq() - m0 * m0).abs() / (m0 * m0));
            Ok(())
        },
        |total, part| {
            total.moments.iter_mut().zip(&part.moments).for_each(|(a, b)| a.merge(b));
            total.radial.merge(&part.radial);
            total.cube.merge(&part.cube);
            total.rejected += part.rejected;
            total.max_drift = total.max_drift.max(part.max_drift);
        },
    )?;

    let mut radial = acc.radial;
    let samples_per_particle = if config.steps >= config.burn_in {
        ((config.steps - config.burn_in) / config.sample_every + 1) as f64
    } else {
        0.0
    };
    let span = config.steps.saturating_sub(config.burn_in) as f64 * config.dt;
    let relax_rate = bath.tau_c * bath.friction / m;
    radial.effective_samples = config.ensemble as f64 * samples_per_particle.min(1.0 + span * relax_rate);
    let low_confidence = radial.effective_samples < MIN_EFFECTIVE_SAMPLES;
    let mut warnings = Vec::new();
    if low_confidence {
        warnings.push(format!(
            "radial histogram has about {:.0} effective samples (< {MIN_EFFECTIVE_SAMPLES:e})",
            radial.effective_samples
        ));
    }
    if acc.rejected > 0 {
        warnings.push(format!("{} steps rejected and retried with halved step", acc.rejected));
    }
    let total_time = config.steps as f64 * config.dt;
    Ok(EnsembleResult {
        config: config.clone(),
        tau_c: bath.tau_c,
        series: acc
            .moments
            .iter()
            .enumerate()
            .map(|(k, s)| s.record(k * config.record_every, config.dt))
            .collect(),
        radial,
        cube: acc.cube,
        rejected_steps: acc.rejected,
        max_mass_drift: acc.max_drift,
        mass_drift_rate: if total_time > 0.0 { acc.max_drift / total_time } else { 0.0 },
        low_confidence,
        warnings,
    })
}

/// One step of size `dt`. A rejected step is split into two halves whose
/// Brownian increments sum to the rejected one (Brownian bridge), recursively.
fn advance(
    s: &PhasePoint<f64>,
    bath: &BathParams<f64>,
    dt: f64,
    opts: &StepOptions,
    halvings: u32,
    rng: &mut impl Rng,
    rejected: &mut u64,
) -> Result<PhasePoint<f64>> {
    let xi: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
    advance_with(s, bath, dt, &xi, opts, halvings, rng, rejected)
}

#[allow(clippy::too_many_arguments)]
fn advance_with(
    s: &PhasePoint<f64>,
    bath: &BathParams<f64>,
    dt: f64,
    xi: &[f64; 3],
    opts: &StepOptions,
    halvings: u32,
    rng: &mut impl Rng,
    rejected: &mut u64,
) -> Result<PhasePoint<f64>> {
    match em_step(s, bath, dt, xi, opts) {
        Err(Error::StepRejected(msg)) => {
            *rejected += 1;
            if halvings == 0 {
                return Err(Error::StepRejected(format!("{msg}; no halvings left")));
            }
            let eta: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let first: [f64; 3] = std::array::from_fn(|k| r * (xi[k] + eta[k]));
            let second: [f64; 3] = std::array::from_fn(|k| r * (xi[k] - eta[k]));
            let mid = advance_with(s, bath, 0.5 * dt, &first, opts, halvings - 1, rng, rejected)?;
            advance_with(&mid, bath, 0.5 * dt, &second, opts, halvings - 1, rng, rejected)
        }
        other => other,
    }
}

/// Score of one analytic candidate `exp(−βp⁰) μ` against a histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub measure: ShellMeasure,
    pub l1_at_bath_beta: f64,
    pub fitted_beta: f64,
    pub l1_at_fitted_beta: f64,
}

/// Histogram against the reference stationary family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// L¹ distance to the reference profile at the bath `β`.
    pub distance: f64,
    /// `β` minimizing the L¹ distance over the family `reference · exp(−Δβ p⁰)`.
    pub fitted_beta: f64,
    pub distance_at_fitted_beta: f64,
    pub candidates: Vec<CandidateScore>,
    pub effective_samples: f64,
    pub low_confidence: bool,
}

/// L¹ distance between a bath-frame radial histogram and a reference
/// stationary profile (bin masses, overflow included).
pub fn stationarity_distance(
    hist: &RadialHistogram,
    m: f64,
    bath: &BathParams<f64>,
    reference: &RadialProfile,
) -> Result<StationarityReport> {
    if hist.total() == 0 {
        return Err(Error::InvalidArgument("empty histogram".into()));
    }
    if (reference.mass - m).abs() > 1e-12 * m {
        return Err(Error::InvalidArgument(format!(
            "reference profile is for mass {}, histogram for {m}",
            reference.mass
        )));
    }
    let (probs, overflow) = hist.probabilities();
    let l1_vs = |profile: &RadialProfile| {
        let last = *hist.edges.last().unwrap();
        let body: f64 = probs
            .iter()
            .enumerate()
            .map(|(k, p)| (p - profile.mass_between(hist.edges[k], hist.edges[k + 1])).abs())
            .sum();
        body + (overflow - (1.0 - profile.cdf(last))).abs()
    };
    let beta = bath.beta;
    let (fitted_beta, distance_at_fitted_beta) = minimize_beta(beta, |b| l1_vs(&reference.reweighted(b - beta)));
    let candidates = [ShellMeasure::Lebesgue, ShellMeasure::Invariant]
        .iter()
        .map(|&mu| {
            let at = |b: f64| l1_vs(&analytic_profile(reference, mu, b));
            let (fb, lf) = minimize_beta(beta, at);
            CandidateScore {
                measure: mu,
                l1_at_bath_beta: at(beta),
                fitted_beta: fb,
                l1_at_fitted_beta: lf,
            }
        })
        .collect();
    Ok(StationarityReport {
        distance: l1_vs(reference),
        fitted_beta,
        distance_at_fitted_beta,
        candidates,
        effective_samples: hist.effective_samples,
        low_confidence: hist.effective_samples < MIN_EFFECTIVE_SAMPLES,
    })
}

/// `exp(−β(p⁰ − m)) μ(p⁰)` on the cells of `like`, by midpoint rule over
/// 16 sub-intervals per cell.
pub fn analytic_profile(like: &RadialProfile, measure: ShellMeasure, beta: f64) -> RadialProfile {
    let m = like.mass;
    let mut probs: Vec<f64> = like
        .edges
        .windows(2)
        .map(|e| {
            let h = (e[1] - e[0]) / 16.0;
            (0..16)
                .map(|k| measure.radial_density(e[0] + (k as f64 + 0.5) * h, m, beta) * h)
                .sum()
        })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    RadialProfile {
        mass: m,
        edges: like.edges.clone(),
        probabilities: probs,
    }
}

/// Golden-section search on `[β/4, 4β]` in `ln β`.
fn minimize_beta(beta: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((beta / 4.0).ln(), (4.0 * beta).ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    let x = (0.5 * (a + b)).exp();
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::alpha;
    use crate::fokker_planck::{stationary_profile, MomentumGrid, StationaryMethod};

    fn bath() -> BathParams<f64> {
        BathParams::new(1.0, 1.5, 0.5, 1.0, FourVector::at_rest(1.0)).unwrap()
    }

    fn reference(b: &BathParams<f64>) -> RadialProfile {
        let grid = MomentumGrid::radial_for(1.0, b.beta, 512).unwrap();
        let prof = stationary_profile(&grid, b, 1e-8, StationaryMethod::ZeroFlux).unwrap();
        RadialProfile::from_state(&grid, &prof.state).unwrap()
    }

    #[test]
    fn free_streaming_without_bath() {
        let b = BathParams::new(1.0, 0.0, 0.0, 1.0, FourVector::at_rest(1.0)).unwrap();
        let s = PhasePoint::<f64>::on_shell(2.0, [0.3, -0.4, 1.2]).unwrap();
        let next = em_step(&s, &b, 0.1, &[0.7, -1.1, 0.2], &StepOptions::default()).unwrap();
        assert_eq!(next.p, s.p);
        let v = s.p.scale(0.1 / 2.0);
        for i in 0..4 {
            assert!((next.x[i] - v[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn overshooting_step_is_refused() {
        let b = BathParams::new(1.0, 3.0, 1.0, 1.0, FourVector::at_rest(1.0)).unwrap();
        let s = PhasePoint::on_shell(1.0, [0.0, 0.0, 3.0]).unwrap();
        // λ = 2 and w·p = √10: the bound is dt ≤ 1/(2√10).
        let limit = 1.0 / (2.0 * 10f64.sqrt());
        assert!(em_step(&s, &b, 0.99 * limit, &[0.0; 3], &StepOptions::default()).is_ok());
        match em_step(&s, &b, 1.01 * limit, &[0.0; 3], &StepOptions::default()) {
            Err(Error::Stability { suggested, .. }) => assert!(suggested < limit),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn projection_restores_the_shell() {
        let b = bath();
        let s = PhasePoint::on_shell(1.3, [2.0, 0.1, -0.5]).unwrap();
        for proj in [Projection::ResolveP0, Projection::RescaleSpatial] {
            let opts = StepOptions {
                projection: proj,
                ..Default::default()
            };
            let next = em_step(&s, &b, 0.01, &[1.0, 0.5, -2.0], &opts).unwrap();
            assert!((next.p.norm_sq() - 1.69).abs() <= 1e-14 * 1.69 * 10.0, "{proj:?}");
            next.validate().unwrap();
        }
    }

    #[test]
    fn one_step_second_moments_at_rest() {
        let b = bath();
        let (m, dt, n) = (1.0, 1e-3, 100_000usize);
        let s = PhasePoint::on_shell(m, [0.0; 3]).unwrap();
        let opts = StepOptions {
            projection: Projection::Off,
            ..Default::default()
        };
        let mut rng = keyed_rng(11, 0);
        let mut sum = [0.0; 3];
        let mut sq = [[0.0; 3]; 3];
        for _ in 0..n {
            let xi: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let d = em_step(&s, &b, dt, &xi, &opts).unwrap().p - s.p;
            for i in 0..3 {
                sum[i] += d[i + 1];
                for j in 0..3 {
                    sq[i][j] += d[i + 1] * d[j + 1];
                }
            }
        }
        let expect = 2.0 * b.tau_c * b.spread() * dt;
        // Var of Δp_iΔp_j is 2E² on the diagonal and E² off it.
        for i in 0..3 {
            assert!((sum[i] / n as f64).abs() < 5.0 * (expect / n as f64).sqrt());
            for j in 0..3 {
                let mean = sq[i][j] / n as f64;
                let target = if i == j { expect } else { 0.0 };
                let se = expect * if i == j { 2f64.sqrt() } else { 1.0 } / (n as f64).sqrt();
                assert!((mean - target).abs() < 4.0 * se, "({i},{j}) {mean} vs {target}");
            }
        }
    }

    /// Gauss–Hermite nodes and weights for `∫ e^{−x²} f(x) dx`.
    fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(n);
        let pi4 = std::f64::consts::PI.powf(-0.25);
        let mut z = 0.0f64;
        for i in 0..n {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * out[0].0,
                3 => 1.91 * z - 0.91 * out[1].0,
                _ => 2.0 * z - out[i - 2].0,
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pi4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            out.push((z, 2.0 / (pp * pp)));
        }
        let mut all: Vec<(f64, f64)> = out.iter().flat_map(|&(x, w)| [(x, w), (-x, w)]).collect();
        all.truncate(2 * n.div_ceil(2));
        all
    }

    /// `E[f(p)]` after one step, by tensor Gauss–Hermite over the normals.
    fn expect_after_step(
        s: &PhasePoint<f64>,
        b: &BathParams<f64>,
        dt: f64,
        opts: &StepOptions,
        f: impl Fn(&FourVector<f64>) -> f64,
    ) -> f64 {
        let gh: Vec<(f64, f64)> = gauss_hermite(10)
            .into_iter()
            .map(|(x, w)| (x * 2f64.sqrt(), w / std::f64::consts::PI.sqrt()))
            .collect();
        let mut e = 0.0;
        for &(x, wx) in &gh {
            for &(y, wy) in &gh {
                for &(z, wz) in &gh {
                    e += wx * wy * wz * f(&em_step(s, b, dt, &[x, y, z], opts).unwrap().p);
                }
            }
        }
        e
    }

    #[test]
    fn generator_consistency() {
        // The finite-step generator, Richardson-extrapolated to Δ → 0.
        let b = BathParams::new(1.0, 1.5, 0.5, 0.7, FourVector::at_rest(1.0)).unwrap();
        let phi = |p: &FourVector<f64>| (0.4 * p[1] - 0.3 * p[3]).sin() + 0.2 * p[2] * p[2] + 0.1 * p[0];
        let opts = StepOptions {
            projection: Projection::Off,
            ..Default::default()
        };
        let mut rng = keyed_rng(5, 0);
        for _ in 0..5 {
            let sp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
            let s = PhasePoint::on_shell(1.0, sp).unwrap();
            let rate = |dt: f64| (expect_after_step(&s, &b, dt, &opts, phi) - phi(&s.p)) / dt;
            let (r1, r2) = (rate(2e-4), rate(1e-4));
            let extrapolated = 2.0 * r2 - r1;

            let a = alpha(&s.p, &b).unwrap();
            let d = ito_drift(&s.p, &b, default_step(&s.p)).unwrap().drift;
            let h = 1e-4;
            let shifted = |mu: usize, nu: usize, sm: f64, sn: f64| {
                let mut q = s.p;
                q[mu] += sm * h;
                q[nu] += sn * h;
                phi(&q)
            };
            let mut gen = 0.0;
            for mu in 0..4 {
                gen += d[mu] * (shifted(mu, mu, 0.5, 0.5) - shifted(mu, mu, -0.5, -0.5)) / (2.0 * h);
                for nu in 0..4 {
                    let d2 = (shifted(mu, nu, 1.0, 1.0) - shifted(mu, nu, 1.0, -1.0) - shifted(mu, nu, -1.0, 1.0)
                        + shifted(mu, nu, -1.0, -1.0))
                        / (4.0 * h * h);
                    gen += a.tensor().m[mu][nu] * d2;
                }
            }
            gen *= b.tau_c;
            assert!((extrapolated - gen).abs() < 0.01 * gen.abs().max(1e-2), "{extrapolated} vs {gen}");
        }
    }

    #[test]
    fn mass_drift_without_projection_is_second_order() {
        // Noise and divergence cancel in E[p²] at first order, leaving Δ².
        let b = bath();
        let s = PhasePoint::on_shell(1.0, [0.8, -0.2, 0.5]).unwrap();
        let opts = StepOptions {
            projection: Projection::Off,
            ..Default::default()
        };
        let drift = |dt: f64| expect_after_step(&s, &b, dt, &opts, |p| p.norm_sq()) - 1.0;
        let (d1, d2) = (drift(2e-3), drift(1e-3));
        let ratio = d1 / d2;
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio} ({d1}, {d2})");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let b = bath();
        let cfg = SimConfig {
            steps: 50,
            ensemble: 600,
            seed: 9,
            record_every: 10,
            ..Default::default()
        };
        let init = Initial::Delta { mass: 1.0, p: [2.0, 0.0, 0.0] };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let r = pool.install(|| run_ensemble(&cfg, &b, &init)).unwrap();
            let mut buf = Vec::new();
            r.write_json(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn pure_advection_keeps_the_momentum_marginal() {
        let b = BathParams::new(1.0, 0.0, 0.0, 1.0, FourVector::at_rest(1.0)).unwrap();
        let cfg = SimConfig {
            steps: 100,
            ensemble: 50,
            ..Default::default()
        };
        let r = run_ensemble(&cfg, &b, &Initial::Delta { mass: 1.0, p: [0.0, 3.0, 0.0] }).unwrap();
        for rec in &r.series {
            assert!((rec.mean_p - 3.0).abs() < 1e-12);
        }
        let last = r.series.last().unwrap();
        assert!((last.lab_time - 100.0 * 0.005 * 10f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn friction_decelerates_fast_particles() {
        let b = bath();
        let cfg = SimConfig {
            steps: 800,
            ensemble: 2000,
            record_every: 100,
            ..Default::default()
        };
        let r = run_ensemble(&cfg, &b, &Initial::Delta { mass: 1.0, p: [5.0, 0.0, 0.0] }).unwrap();
        for w in r.series.windows(2) {
            let se = (w[0].mean_p_se.powi(2) + w[1].mean_p_se.powi(2)).sqrt();
            assert!(w[1].mean_p < w[0].mean_p + 3.0 * se, "{:?}", r.series);
        }
        assert!(r.series.last().unwrap().mean_p < 3.0);
        assert!(r.max_mass_drift < 1e-13);
    }

    #[test]
    fn synthesized_histogram_scores_zero() {
        let b = bath();
        let prof = reference(&b);
        let hist = RadialHistogram::from_profile(&prof, 10.0, 40, 1_000_000_000);
        let rep = stationarity_distance(&hist, 1.0, &b, &prof).unwrap();
        assert!(rep.distance < 1e-6);
        assert!((rep.fitted_beta - 1.0).abs() < 1e-3);
        assert!(!rep.low_confidence);
    }

    #[test]
    fn stationary_ensemble_keeps_its_moments() {
        let b = bath();
        let prof = reference(&b);
        let cfg = SimConfig {
            dt: 0.002,
            steps: 1000,
            ensemble: 4000,
            record_every: 250,
            ..Default::default()
        };
        let r = run_ensemble(&cfg, &b, &Initial::Profile(prof)).unwrap();
        let first = r.series[0];
        for rec in &r.series[1..] {
            let se = (first.mean_energy_se.powi(2) + rec.mean_energy_se.powi(2)).sqrt();
            assert!((rec.mean_energy - first.mean_energy).abs() < 3.0 * se);
            let se = (first.mean_p_se.powi(2) + rec.mean_p_se.powi(2)).sqrt();
            assert!((rec.mean_p - first.mean_p).abs() < 3.0 * se);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

    proptest! {
        #[test]
        fn phase_point_mass_is_cached(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0, m in 0.1f64..4.0) {
            let s = PhasePoint::on_shell(m, [x, y, z]).unwrap();
            prop_assert!((s.mass - m).abs() <= 1e-12 * m.max(1.0) * 10.0);
            prop_assert!(s.validate().is_ok());
        }
    }
    }
}
