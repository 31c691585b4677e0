//! Gaussian random electromagnetic fields with a prescribed spectral density,
//! exact particle dynamics in a sampled field, and Monte Carlo estimators of
//! the diffusion tensor.
//!
//! Each mode carries a vector potential `A_μ ∝ e_μ`, so the field
//! `F = ∂∧A` satisfies the Bianchi identities exactly. Internally a mode is
//! stored as two lowered bivectors `A`, `B` with
//! `F(x) = −sin(k·x) A − cos(k·x) B`.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::alpha_matrix;
use crate::ensemble::{keyed_rng, par_reduce};
use crate::error::{Error, Result};
use crate::minkowski::{Boost, FourVector, Tensor2};
use crate::spectral::{self, orthonormal_pair, BathParams, Profile, SpectralDensity};

/// Lowered bivector index pairs `(μ, ν)`, `μ < ν`, in storage order.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Bivector components `F_{μν}` in [`PAIRS`] order.
pub type Bivector = [f64; 6];

const WORDS_PER_MODE: u128 = 256;
const RADIAL_CELLS: usize = 4096;
const TRANSVERSALITY_TOL: f64 = 1e-12;
/// Per-step relative `p²` drift above which the trajectory carries advice.
pub const MASS_DRIFT_ADVICE: f64 = 1e-6;

fn lower(v: &FourVector<f64>) -> [f64; 4] {
    [v[0], -v[1], -v[2], -v[3]]
}

fn dot_low(a: &[f64; 4], x: &FourVector<f64>) -> f64 {
    a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + a[3] * x[3]
}

fn wedge(k: &[f64; 4], e: &[f64; 4]) -> Bivector {
    PAIRS.map(|(m, n)| k[m] * e[n] - k[n] * e[m])
}

fn bivector_max(b: &Bivector) -> f64 {
    b.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Antisymmetric lowered tensor from bivector components.
pub fn bivector_tensor(b: &Bivector) -> Tensor2<f64> {
    let mut m = [[0.0; 4]; 4];
    for (i, &(mu, nu)) in PAIRS.iter().enumerate() {
        m[mu][nu] = b[i];
        m[nu][mu] = -b[i];
    }
    Tensor2::from_rows(m)
}

/// `F^μ_ν p^ν` as a contravariant vector.
fn mixed_apply(b: &Bivector, p: &FourVector<f64>) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, &(mu, nu)) in PAIRS.iter().enumerate() {
        out[mu] += b[i] * p[nu];
        out[nu] -= b[i] * p[mu];
    }
    for o in out.iter_mut().skip(1) {
        *o = -*o;
    }
    out
}

/// One plane-wave mode of the vector potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMode {
    pub k: FourVector<f64>,
    pub polarizations: Vec<FourVector<f64>>,
    pub amplitudes: Vec<Complex64>,
    /// Importance weight `ω`.
    pub weight: f64,
}

impl FieldMode {
    pub fn new(
        k: FourVector<f64>,
        polarizations: Vec<FourVector<f64>>,
        amplitudes: Vec<Complex64>,
        weight: f64,
    ) -> Result<Self> {
        if !(k[0] > 0.0) || k.norm_sq() < -TRANSVERSALITY_TOL * k[0] * k[0] {
            return Err(Error::InvalidArgument(format!(
                "mode wave vector must be future-directed and not spacelike, got {:?}",
                k.0
            )));
        }
        if polarizations.len() != amplitudes.len() || polarizations.is_empty() {
            return Err(Error::InvalidArgument(
                "each polarization needs exactly one amplitude".into(),
            ));
        }
        if !(weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("mode weight must be ≥ 0, got {weight}")));
        }
        for e in &polarizations {
            let defect = k.dot(e).abs();
            if defect > TRANSVERSALITY_TOL * k.max_abs() * e.max_abs() {
                return Err(Error::invariant(
                    "transversality",
                    format!("e·k = {defect:e} for polarization {:?}", e.0),
                ));
            }
        }
        Ok(FieldMode {
            k,
            polarizations,
            amplitudes,
            weight,
        })
    }

    /// The pair `(A, B)` with `F(x) = −sin(k·x) A − cos(k·x) B`.
    pub fn bivectors(&self) -> (Bivector, Bivector) {
        let kl = lower(&self.k);
        let s = 2.0 * self.weight.sqrt();
        let mut a = [0.0; 6];
        let mut b = [0.0; 6];
        for (e, c) in self.polarizations.iter().zip(&self.amplitudes) {
            let f = wedge(&kl, &lower(e));
            for i in 0..6 {
                a[i] += s * c.re * f[i];
                b[i] += s * c.im * f[i];
            }
        }
        (a, b)
    }
}

#[derive(Clone, Debug)]
struct Term {
    k_low: [f64; 4],
    a: Bivector,
    b: Bivector,
}

/// A sampled field: a finite sum of plane-wave modes.
#[derive(Clone, Debug)]
pub struct FieldRealization {
    modes: Vec<FieldMode>,
    terms: Vec<Term>,
    seed: u64,
    index: u64,
}

impl FieldRealization {
    pub fn from_modes(modes: Vec<FieldMode>, seed: u64, index: u64) -> Self {
        let terms = modes
            .iter()
            .map(|m| {
                let (a, b) = m.bivectors();
                Term {
                    k_low: lower(&m.k),
                    a,
                    b,
                }
            })
            .collect();
        FieldRealization {
            modes,
            terms,
            seed,
            index,
        }
    }

    /// Appends a term given directly by its bivectors, bypassing the
    /// potential. Used to probe the Bianchi diagnostics.
    pub fn push_raw_term(&mut self, k: &FourVector<f64>, a: Bivector, b: Bivector) {
        self.terms.push(Term {
            k_low: lower(k),
            a,
            b,
        });
    }

    pub fn modes(&self) -> &[FieldMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// `F_{μν}(x)` in [`PAIRS`] order.
    pub fn bivector_at(&self, x: &FourVector<f64>) -> Bivector {
        let mut f = [0.0; 6];
        for t in &self.terms {
            let (s, c) = dot_low(&t.k_low, x).sin_cos();
            for i in 0..6 {
                f[i] -= s * t.a[i] + c * t.b[i];
            }
        }
        f
    }

    /// `∂_σ F_{μν}(x)`, indexed `[σ][pair]`.
    pub fn gradient_at(&self, x: &FourVector<f64>) -> [Bivector; 4] {
        let mut g = [[0.0; 6]; 4];
        for t in &self.terms {
            let (s, c) = dot_low(&t.k_low, x).sin_cos();
            for i in 0..6 {
                let d = -c * t.a[i] + s * t.b[i];
                for (sigma, gs) in g.iter_mut().enumerate() {
                    gs[i] += t.k_low[sigma] * d;
                }
            }
        }
        g
    }

    /// Upper bound on any field component.
    pub fn field_scale(&self) -> f64 {
        self.terms.iter().map(|t| bivector_max(&t.a) + bivector_max(&t.b)).sum()
    }

    /// Upper bound on any component of `∂F`.
    pub fn gradient_scale(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k = t.k_low.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                k * (bivector_max(&t.a) + bivector_max(&t.b))
            })
            .sum()
    }

    /// CSV dump, one row per (mode, polarization).
    pub fn write_modes_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode", "pol", "k0", "k1", "k2", "k3", "e0", "e1", "e2", "e3", "c_re", "c_im", "weight",
        ])
        ?;
        for (i, m) in self.modes.iter().enumerate() {
            for (j, (e, c)) in m.polarizations.iter().zip(&m.amplitudes).enumerate() {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(m.k.0.iter().map(|v| format!("{v:e}")));
                row.extend(e.0.iter().map(|v| format!("{v:e}")));
                row.push(format!("{:e}", c.re));
                row.push(format!("{:e}", c.im));
                row.push(format!("{:e}", m.weight));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `F_{μν}(x)` as an antisymmetric lowered tensor.
pub fn field_strength(real: &FieldRealization, x: &FourVector<f64>) -> Tensor2<f64> {
    bivector_tensor(&real.bivector_at(x))
}

/// Largest cyclic sum `|∂_σF_{μν} + ∂_νF_{σμ} + ∂_μF_{νσ}|` over index
/// triples, from exact mode derivatives.
pub fn bianchi_residual(real: &FieldRealization, x: &FourVector<f64>) -> f64 {
    let g = real.gradient_at(x);
    let f = |sigma: usize, mu: usize, nu: usize| -> f64 {
        bivector_tensor(&g[sigma]).m[mu][nu]
    };
    let mut worst = 0.0f64;
    for s in 0..4 {
        for m in 0..4 {
            for n in 0..4 {
                worst = worst.max((f(s, m, n) + f(n, s, m) + f(m, n, s)).abs());
            }
        }
    }
    worst
}

enum Radial {
    Shell { k: f64 },
    Grid { nodes: Vec<f64>, dens: Vec<f64>, cum: Vec<f64> },
}

struct ComponentSampler {
    mass: f64,
    profile: Profile,
    radial: Radial,
    proposal_mass: f64,
}

impl ComponentSampler {
    fn new(mass: f64, profile: &Profile) -> Self {
        let radial = match profile {
            Profile::Monochromatic { k0, .. } => Radial::Shell { k: *k0 },
            _ => {
                let kmax = profile.cutoff();
                let h = kmax / RADIAL_CELLS as f64;
                let nodes: Vec<f64> = (0..=RADIAL_CELLS).map(|i| i as f64 * h).collect();
                let dens: Vec<f64> = nodes
                    .iter()
                    .map(|&k| (4.0 * std::f64::consts::PI * profile.k2_g(k)).max(0.0))
                    .collect();
                let mut cum = vec![0.0; nodes.len()];
                for i in 0..RADIAL_CELLS {
                    cum[i + 1] = cum[i] + 0.5 * h * (dens[i] + dens[i + 1]);
                }
                Radial::Grid { nodes, dens, cum }
            }
        };
        let proposal_mass = match (&radial, profile) {
            (Radial::Shell { .. }, Profile::Monochromatic { weight, .. }) => *weight,
            (Radial::Grid { cum, .. }, _) => *cum.last().unwrap(),
            _ => 0.0,
        };
        ComponentSampler {
            mass,
            profile: profile.clone(),
            radial,
            proposal_mass,
        }
    }

    /// Draws `|k|` and returns it with the ratio of target to normalized
    /// proposal density.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match &self.radial {
            Radial::Shell { k } => (*k, self.proposal_mass),
            Radial::Grid { nodes, dens, cum } => {
                let total = self.proposal_mass;
                let u = rng.random::<f64>() * total;
                let i = cum.partition_point(|&c| c <= u).clamp(1, nodes.len() - 1) - 1;
                let h = nodes[i + 1] - nodes[i];
                let (d0, d1) = (dens[i], dens[i + 1]);
                let slope = (d1 - d0) / h;
                let rem = (u - cum[i]).max(0.0);
                let denom = d0 + (d0 * d0 + 2.0 * slope * rem).max(0.0).sqrt();
                let t = if denom > 0.0 { (2.0 * rem / denom).clamp(0.0, h) } else { 0.0 };
                let k = nodes[i] + t;
                let q = (d0 + slope * t) / total;
                let r = 4.0 * std::f64::consts::PI * self.profile.k2_g(k);
                (k, if q > 0.0 { r / q } else { 0.0 })
            }
        }
    }
}

/// Mode sampler for a spectral density, with the polarization gauge fixed
/// by a frame.
pub struct FieldSampler {
    density: SpectralDensity,
    gauge: FourVector<f64>,
    from_gauge: Boost<f64>,
    to_gauge: Boost<f64>,
    from_density: Boost<f64>,
    components: Vec<ComponentSampler>,
    total: f64,
}

impl FieldSampler {
    /// Sampler gauged in the rest frame of the density.
    pub fn new(g: &SpectralDensity) -> Result<Self> {
        let comps: Vec<ComponentSampler> = g
            .components()
            .iter()
            .map(|c| ComponentSampler::new(c.mass, &c.profile))
            .collect();
        let total: f64 = comps.iter().map(|c| c.proposal_mass).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDensity(
                "spectral density has zero total mass; no modes can be drawn".into(),
            ));
        }
        let from_density = Boost::from_rest_of(&g.frame())?;
        Ok(FieldSampler {
            density: g.clone(),
            gauge: g.frame(),
            from_gauge: from_density,
            to_gauge: from_density.inverse(),
            from_density,
            components: comps,
            total,
        })
    }

    /// Fixes the polarization gauge in the rest frame of `w`.
    pub fn with_gauge(mut self, w: &FourVector<f64>) -> Result<Self> {
        self.from_gauge = Boost::from_rest_of(w)?;
        self.to_gauge = self.from_gauge.inverse();
        self.gauge = *w;
        Ok(self)
    }

    pub fn density(&self) -> &SpectralDensity {
        &self.density
    }

    pub fn gauge(&self) -> FourVector<f64> {
        self.gauge
    }

    /// Proposal estimate of `Z = ∫ G̃ dk`.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    fn polarizations(&self, k: &FourVector<f64>) -> Vec<FourVector<f64>> {
        let kw = self.to_gauge.apply(k);
        let s = kw.spatial();
        let n = kw.spatial_norm();
        let massive = kw.norm_sq() > 1e-12 * kw[0] * kw[0];
        let spatial = |e: [f64; 3]| self.from_gauge.apply(&FourVector::new(0.0, e[0], e[1], e[2]));
        if n <= 1e-12 * kw[0] {
            return vec![spatial([1.0, 0.0, 0.0]), spatial([0.0, 1.0, 0.0]), spatial([0.0, 0.0, 1.0])];
        }
        let axis = [s[0] / n, s[1] / n, s[2] / n];
        let (e1, e2) = orthonormal_pair(&axis);
        let mut pols = vec![spatial(e1), spatial(e2)];
        if massive {
            let mu = kw.norm_sq().sqrt();
            let e3 = FourVector::new(n / mu, kw[0] * axis[0] / mu, kw[0] * axis[1] / mu, kw[0] * axis[2] / mu);
            pols.push(self.from_gauge.apply(&e3));
        }
        pols
    }

    /// Realization `index` of `n` modes under key `seed`. Every mode draws
    /// from its own fixed window of the `(seed, index)` stream.
    pub fn realize(&self, n: usize, seed: u64, index: u64) -> Result<FieldRealization> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one mode".into()));
        }
        let mut rng = keyed_rng(seed, index);
        let mut modes = Vec::with_capacity(n);
        for i in 0..n {
            rng.set_word_pos(i as u128 * WORDS_PER_MODE);
            let mut u = rng.random::<f64>() * self.total;
            let mut ci = self.components.len() - 1;
            for (j, c) in self.components.iter().enumerate() {
                if u < c.proposal_mass {
                    ci = j;
                    break;
                }
                u -= c.proposal_mass;
            }
            let comp = &self.components[ci];
            let (kr, ratio) = comp.draw(&mut rng);
            let prob = comp.proposal_mass / self.total;
            let weight = ratio / (n as f64 * prob);
            let cos_t: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let phi: f64 = std::f64::consts::TAU * rng.random::<f64>();
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let e = (comp.mass * comp.mass + kr * kr).sqrt();
            let k_rest = FourVector::new(e, kr * sin_t * phi.cos(), kr * sin_t * phi.sin(), kr * cos_t);
            let k = self.from_density.apply(&k_rest);
            let pols = self.polarizations(&k);
            let amps = pols
                .iter()
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    Complex64::new(0.5 * a, 0.5 * b)
                })
                .collect();
            modes.push(FieldMode::new(k, pols, amps, weight)?);
        }
        Ok(FieldRealization::from_modes(modes, seed, index))
    }
}

/// One realization of `n` modes of `g` under key `seed`.
pub fn sample_modes(g: &SpectralDensity, n: usize, seed: u64) -> Result<FieldRealization> {
    FieldSampler::new(g)?.realize(n, seed, 0)
}

/// Integrated worldline in a fixed field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub tau: Vec<f64>,
    pub x: Vec<FourVector<f64>>,
    pub p: Vec<FourVector<f64>>,
    /// Largest per-step `|Δ(p²)| / p₀²`.
    pub max_step_drift: f64,
    /// `|p²(τ_max) − p₀²| / p₀²`.
    pub total_drift: f64,
    pub advice: Option<String>,
}

impl Trajectory {
    pub fn end(&self) -> (FourVector<f64>, FourVector<f64>) {
        (*self.x.last().unwrap(), *self.p.last().unwrap())
    }
}

fn liouville_rhs(real: &FieldRealization, x: &FourVector<f64>, p: &FourVector<f64>) -> (FourVector<f64>, FourVector<f64>) {
    let m = p.norm_sq().abs().sqrt();
    let fp = mixed_apply(&real.bivector_at(x), p);
    (p.scale(1.0 / m), FourVector(fp).scale(1.0 / m))
}

/// Classical RK4 for `dx/dτ = p/√p²`, `dp^μ/dτ = F^μ_ν p^ν/√p²`. A negative
/// `tau_max` integrates backwards.
pub fn liouville_trajectory(
    real: &FieldRealization,
    x0: &FourVector<f64>,
    p0: &FourVector<f64>,
    tau_max: f64,
    steps: usize,
) -> Result<Trajectory> {
    let m2 = p0.norm_sq();
    if !(m2 > 0.0) {
        return Err(Error::OffShell(m2));
    }
    if steps == 0 || !tau_max.is_finite() {
        return Err(Error::InvalidArgument("need steps ≥ 1 and a finite τ_max".into()));
    }
    let h = tau_max / steps as f64;
    let (mut x, mut p) = (*x0, *p0);
    let mut out = Trajectory {
        tau: vec![0.0],
        x: vec![x],
        p: vec![p],
        max_step_drift: 0.0,
        total_drift: 0.0,
        advice: None,
    };
    for n in 0..steps {
        let (k1x, k1p) = liouville_rhs(real, &x, &p);
        let (k2x, k2p) = liouville_rhs(real, &(x + k1x.scale(0.5 * h)), &(p + k1p.scale(0.5 * h)));
        let (k3x, k3p) = liouville_rhs(real, &(x + k2x.scale(0.5 * h)), &(p + k2p.scale(0.5 * h)));
        let (k4x, k4p) = liouville_rhs(real, &(x + k3x.scale(h)), &(p + k3p.scale(h)));
        let before = p.norm_sq();
        x = x + (k1x + k2x.scale(2.0) + k3x.scale(2.0) + k4x).scale(h / 6.0);
        p = p + (k1p + k2p.scale(2.0) + k3p.scale(2.0) + k4p).scale(h / 6.0);
        let after = p.norm_sq();
        if !(after > 0.0) {
            return Err(Error::Stability {
                dt: h,
                suggested: h / 10.0,
            });
        }
        out.max_step_drift = out.max_step_drift.max((after - before).abs() / m2);
        out.tau.push((n + 1) as f64 * h);
        out.x.push(x);
        out.p.push(p);
    }
    out.total_drift = (p.norm_sq() - m2).abs() / m2;
    if out.max_step_drift > MASS_DRIFT_ADVICE {
        // RK4 drift per step scales as h⁵.
        let factor = (out.max_step_drift / MASS_DRIFT_ADVICE).powf(0.2).ceil();
        out.advice = Some(format!(
            "per-step p² drift {:.2e} exceeds {MASS_DRIFT_ADVICE:e}; use at least {} steps",
            out.max_step_drift,
            steps * factor as usize
        ));
    }
    Ok(out)
}

/// Monte Carlo estimate of `⟨F_{μν}(x) F_{σρ}(x)⟩` over realizations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub realizations: usize,
    pub modes: usize,
    pub seed: u64,
    pub mean: Bivector,
    pub mean_se: Bivector,
    /// Second moments in [`PAIRS`] × [`PAIRS`] order.
    pub covariance: [[f64; 6]; 6],
    pub covariance_se: [[f64; 6]; 6],
    /// Second moments over contiguous batches of realizations.
    pub batches: Vec<[[f64; 6]; 6]>,
}

const COVARIANCE_BATCHES: usize = 16;

#[derive(Clone)]
struct CovAcc {
    sum: [f64; 6],
    sum_sq: [f64; 6],
    outer: [[f64; 6]; 6],
    outer_sq: [[f64; 6]; 6],
    batches: Vec<[[f64; 6]; 6]>,
}

impl CovAcc {
    fn new() -> Self {
        CovAcc {
            sum: [0.0; 6],
            sum_sq: [0.0; 6],
            outer: [[0.0; 6]; 6],
            outer_sq: [[0.0; 6]; 6],
            batches: vec![[[0.0; 6]; 6]; COVARIANCE_BATCHES],
        }
    }

    fn merge(&mut self, o: CovAcc) {
        for i in 0..6 {
            self.sum[i] += o.sum[i];
            self.sum_sq[i] += o.sum_sq[i];
            for j in 0..6 {
                self.outer[i][j] += o.outer[i][j];
                self.outer_sq[i][j] += o.outer_sq[i][j];
            }
        }
        for (b, ob) in self.batches.iter_mut().zip(o.batches) {
            for i in 0..6 {
                for j in 0..6 {
                    b[i][j] += ob[i][j];
                }
            }
        }
    }
}

fn standard_error(sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n < 2.0 {
        return f64::INFINITY;
    }
    let mean = sum / n;
    ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
}

/// Coincident-point field covariance at `x` over `realizations` independent
/// realizations of `modes` modes each.
pub fn covariance_estimate(
    sampler: &FieldSampler,
    x: &FourVector<f64>,
    modes: usize,
    realizations: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    if realizations < COVARIANCE_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "need at least {COVARIANCE_BATCHES} realizations"
        )));
    }
    let acc = par_reduce(
        realizations,
        CovAcc::new,
        |r, acc| {
            let f = sampler.realize(modes, seed, r as u64)?.bivector_at(x);
            let batch = r * COVARIANCE_BATCHES / realizations;
            for i in 0..6 {
                acc.sum[i] += f[i];
                acc.sum_sq[i] += f[i] * f[i];
                for j in 0..6 {
                    let v = f[i] * f[j];
                    acc.outer[i][j] += v;
                    acc.outer_sq[i][j] += v * v;
                    acc.batches[batch][i][j] += v;
                }
            }
            Ok(())
        },
        CovAcc::merge,
    )?;
    let n = realizations as f64;
    let mut est = CovarianceEstimate {
        realizations,
        modes,
        seed,
        mean: acc.sum.map(|s| s / n),
        mean_se: [0.0; 6],
        covariance: [[0.0; 6]; 6],
        covariance_se: [[0.0; 6]; 6],
        batches: Vec::with_capacity(COVARIANCE_BATCHES),
    };
    for i in 0..6 {
        est.mean_se[i] = standard_error(acc.sum[i], acc.sum_sq[i], n);
        for j in 0..6 {
            est.covariance[i][j] = acc.outer[i][j] / n;
            est.covariance_se[i][j] = standard_error(acc.outer[i][j], acc.outer_sq[i][j], n);
        }
    }
    for (b, sums) in acc.batches.iter().enumerate() {
        let count = ((b + 1) * realizations).div_ceil(COVARIANCE_BATCHES) - (b * realizations).div_ceil(COVARIANCE_BATCHES);
        est.batches.push(sums.map(|row| row.map(|v| v / count as f64)));
    }
    Ok(est)
}

impl CovarianceEstimate {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mu", "nu", "sigma", "rho", "value", "std_err"])?;
        for (i, &(mu, nu)) in PAIRS.iter().enumerate() {
            for (j, &(sigma, rho)) in PAIRS.iter().enumerate() {
                w.write_record([
                    mu.to_string(),
                    nu.to_string(),
                    sigma.to_string(),
                    rho.to_string(),
                    format!("{:e}", self.covariance[i][j]),
                    format!("{:e}", self.covariance_se[i][j]),
                ])
                ?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn eta(mu: usize, nu: usize) -> f64 {
    match (mu, nu) {
        (0, 0) => 1.0,
        (a, b) if a == b => -1.0,
        _ => 0.0,
    }
}

/// `−(η_{μσ}T_{νρ} − η_{μρ}T_{νσ} + η_{νρ}T_{σμ} − η_{νσ}T_{μρ})` for a
/// lowered symmetric `T`, in [`PAIRS`] × [`PAIRS`] order.
pub fn bianchi_structure(t_low: &[[f64; 4]; 4]) -> [[f64; 6]; 6] {
    let mut c = [[0.0; 6]; 6];
    for (i, &(mu, nu)) in PAIRS.iter().enumerate() {
        for (j, &(s, r)) in PAIRS.iter().enumerate() {
            c[i][j] = -(eta(mu, s) * t_low[nu][r] - eta(mu, r) * t_low[nu][s] + eta(nu, r) * t_low[s][mu]
                - eta(nu, s) * t_low[mu][r]);
        }
    }
    c
}

/// Target coincident covariance from the moment tensor `T^{μν}` of `g`.
pub fn target_covariance(g: &SpectralDensity) -> [[f64; 6]; 6] {
    bianchi_structure(&lower_both(&spectral::moment_tensor(g)))
}

fn lower_both(t: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = *t;
    for (mu, row) in out.iter_mut().enumerate() {
        for (nu, v) in row.iter_mut().enumerate() {
            *v *= eta(mu, mu) * eta(nu, nu);
        }
    }
    out
}

fn levi_civita_pairs() -> [[f64; 6]; 6] {
    let mut c = [[0.0; 6]; 6];
    // ε_{0123} = +1.
    for (i, j, s) in [(0, 5, 1.0), (1, 4, -1.0), (2, 3, 1.0)] {
        c[i][j] = s;
        c[j][i] = s;
    }
    c
}

/// Least-squares decomposition of a coincident covariance into the
/// `k`-moment structure, the extra `w`-dependent structure and the parity-odd
/// `ε_{μνσρ}` structure.
///
/// After integration over `k` the `w∧k` and `w∧w` terms of the general
/// ansatz both reduce to the `w_ν w_ρ` pattern, so only their sum `a_w` is
/// identifiable at coincident points.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AnsatzFit {
    pub a1: f64,
    pub a1_se: f64,
    pub a_w: f64,
    pub a_w_se: f64,
    pub a0: f64,
    pub a0_se: f64,
    /// Largest absolute residual of the fit relative to the largest entry.
    pub relative_residual: f64,
}

fn fit_three(basis: &[[[f64; 6]; 6]; 3], c: &[[f64; 6]; 6]) -> Result<([f64; 3], f64)> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for i in 0..6 {
        for j in i..6 {
            for a in 0..3 {
                atb[a] += basis[a][i][j] * c[i][j];
                for b in 0..3 {
                    ata[a][b] += basis[a][i][j] * basis[b][i][j];
                }
            }
        }
    }
    let x = solve3(ata, atb)?;
    let mut resid = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            let model: f64 = (0..3).map(|a| x[a] * basis[a][i][j]).sum();
            resid = resid.max((c[i][j] - model).abs());
            scale = scale.max(c[i][j].abs());
        }
    }
    Ok((x, resid / scale.max(f64::MIN_POSITIVE)))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::Inconsistency("ansatz structures are linearly dependent".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Fits `C ≈ a1·S(T) + a_w·S(ww) + a0·ε` where `S` is [`bianchi_structure`],
/// `T` the lowered moment tensor and `w` the density frame. Errors come from
/// the spread of per-batch fits.
pub fn fit_covariance_ansatz(
    est: &CovarianceEstimate,
    t_low: &[[f64; 4]; 4],
    w: &FourVector<f64>,
) -> Result<AnsatzFit> {
    let wl = lower(w);
    let ww = std::array::from_fn(|a| std::array::from_fn(|b| wl[a] * wl[b]));
    let basis = [bianchi_structure(t_low), bianchi_structure(&ww), levi_civita_pairs()];
    let (x, relative_residual) = fit_three(&basis, &est.covariance)?;
    let fits: Vec<[f64; 3]> = est
        .batches
        .iter()
        .map(|b| fit_three(&basis, b).map(|r| r.0))
        .collect::<Result<_>>()?;
    let nb = fits.len() as f64;
    let se = |a: usize| {
        let mean = fits.iter().map(|f| f[a]).sum::<f64>() / nb;
        let var = fits.iter().map(|f| (f[a] - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        (var / nb).sqrt()
    };
    Ok(AnsatzFit {
        a1: x[0],
        a1_se: se(0),
        a_w: x[1],
        a_w_se: se(1),
        a0: x[2],
        a0_se: se(2),
        relative_residual,
    })
}

/// Options shared by the Kubo estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KuboConfig {
    pub realizations: usize,
    pub modes: usize,
    pub seed: u64,
    /// RK4 steps across the window `τ`.
    pub steps: usize,
    /// Accept `τ` above a tenth of the estimated correlation time.
    pub allow_long_tau: bool,
    /// Target relative Monte Carlo error.
    pub tolerance: f64,
}

impl Default for KuboConfig {
    fn default() -> Self {
        KuboConfig {
            realizations: 100_000,
            modes: 32,
            seed: 0,
            steps: 1,
            allow_long_tau: false,
            tolerance: 0.05,
        }
    }
}

/// Small-window estimate of `⟨Δp^μ Δp^ν⟩/τ²`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KuboEstimate {
    pub tensor: Tensor2<f64>,
    pub std_err: Tensor2<f64>,
    /// `α^{μν}` from the bath scalars of the same density.
    pub analytic: Tensor2<f64>,
    pub momentum: FourVector<f64>,
    pub tau: f64,
    pub tau_corr: f64,
    pub realizations: usize,
    pub modes: usize,
    pub seed: u64,
    /// Largest standard error relative to the largest analytic entry.
    pub relative_error: f64,
    pub within_tolerance: bool,
    /// Largest `|Δ(p²)|/p²` seen over all trajectories.
    pub max_mass_drift: f64,
}

impl KuboEstimate {
    /// `(estimate − analytic)/std_err` per component; zero where both the
    /// difference and the error vanish.
    pub fn z_scores(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let d = self.tensor.m[i][j] - self.analytic.m[i][j];
                let s = self.std_err.m[i][j];
                if s > 0.0 {
                    d / s
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
        })
    }

    /// `estimate^{μν} p_ν`.
    pub fn degeneracy(&self) -> FourVector<f64> {
        self.tensor.contract(&self.momentum.lower())
    }
}

/// `1/√⟨(k·u)²⟩`: inverse RMS frequency of the density seen by an observer
/// moving with `u`. Infinite for an empty density.
pub fn correlation_time_estimate(g: &SpectralDensity, u: &FourVector<f64>) -> f64 {
    let opts = spectral::QuadOptions::default();
    let z = g.integrate(|_| 1.0, &opts).value;
    if !(z > 0.0) {
        return f64::INFINITY;
    }
    let nu2 = g.integrate(|k| k.dot(u).powi(2), &opts).value / z;
    1.0 / nu2.sqrt()
}

fn analytic_alpha(g: &SpectralDensity, p: &FourVector<f64>, w: &FourVector<f64>) -> Result<Tensor2<f64>> {
    let eps = spectral::energy_density(g, w)?.value;
    let pi = spectral::pressure(g, w)?.value;
    let bath = BathParams::new(1.0, eps, pi.max(0.0), 1.0, *w)?;
    alpha_matrix(p, &bath)
}

#[derive(Clone)]
struct TensorAcc {
    sum: [[f64; 4]; 4],
    sum_sq: [[f64; 4]; 4],
    drift: f64,
}

impl TensorAcc {
    fn new() -> Self {
        TensorAcc {
            sum: [[0.0; 4]; 4],
            sum_sq: [[0.0; 4]; 4],
            drift: 0.0,
        }
    }

    fn add(&mut self, v: [[f64; 4]; 4]) {
        for i in 0..4 {
            for j in 0..4 {
                self.sum[i][j] += v[i][j];
                self.sum_sq[i][j] += v[i][j] * v[i][j];
            }
        }
    }

    fn merge(&mut self, o: TensorAcc) {
        self.add_raw(&o);
        self.drift = self.drift.max(o.drift);
    }

    fn add_raw(&mut self, o: &TensorAcc) {
        for i in 0..4 {
            for j in 0..4 {
                self.sum[i][j] += o.sum[i][j];
                self.sum_sq[i][j] += o.sum_sq[i][j];
            }
        }
    }

    fn finish(&self, n: usize) -> (Tensor2<f64>, Tensor2<f64>) {
        let nf = n as f64;
        let mean = self.sum.map(|r| r.map(|v| v / nf));
        let se = std::array::from_fn(|i| std::array::from_fn(|j| standard_error(self.sum[i][j], self.sum_sq[i][j], nf)));
        (Tensor2::from_rows(mean), Tensor2::from_rows(se))
    }
}

fn check_momentum(p: &FourVector<f64>) -> Result<f64> {
    let m2 = p.norm_sq();
    if !(m2 > 0.0) || !(p[0] > 0.0) {
        return Err(Error::OffShell(m2));
    }
    Ok(m2.sqrt())
}

/// Small-`τ` Kubo estimate of `α^{μν}(p)`: the particle starts at the
/// origin with momentum `p` in each realization and is integrated exactly
/// over proper time `τ`.
pub fn kubo_alpha_estimate(
    g: &SpectralDensity,
    p: &FourVector<f64>,
    w: &FourVector<f64>,
    tau: f64,
    cfg: &KuboConfig,
) -> Result<KuboEstimate> {
    let m = check_momentum(p)?;
    if !(tau > 0.0) || cfg.realizations < 2 || cfg.modes == 0 || cfg.steps == 0 {
        return Err(Error::InvalidArgument(
            "need τ > 0, at least two realizations, one mode and one step".into(),
        ));
    }
    let tau_corr = correlation_time_estimate(g, &p.scale(1.0 / m));
    if tau > tau_corr / 10.0 && !cfg.allow_long_tau {
        return Err(Error::InvalidArgument(format!(
            "τ = {tau:e} exceeds a tenth of the correlation time {tau_corr:e}; shorten τ or allow long windows"
        )));
    }
    let analytic = analytic_alpha(g, p, w)?;
    let mut est = KuboEstimate {
        tensor: Tensor2::zeros(),
        std_err: Tensor2::zeros(),
        analytic,
        momentum: *p,
        tau,
        tau_corr,
        realizations: cfg.realizations,
        modes: cfg.modes,
        seed: cfg.seed,
        relative_error: 0.0,
        within_tolerance: true,
        max_mass_drift: 0.0,
    };
    if tau_corr.is_infinite() {
        // Empty density: the field vanishes identically.
        return Ok(est);
    }
    let sampler = FieldSampler::new(g)?.with_gauge(w)?;
    let origin = FourVector::zero();
    let acc = par_reduce(
        cfg.realizations,
        TensorAcc::new,
        |r, acc| {
            let real = sampler.realize(cfg.modes, cfg.seed, r as u64)?;
            // The window is integrated to 2τ; combining the increments at τ
            // and 2τ cancels the O(τ²) bias of ⟨ΔpΔp⟩/τ².
            let traj = liouville_trajectory(&real, &origin, p, 2.0 * tau, 2 * cfg.steps)?;
            let d1 = traj.p[cfg.steps] - *p;
            let d2 = traj.end().1 - *p;
            let t2 = tau * tau;
            acc.add(std::array::from_fn(|i| {
                std::array::from_fn(|j| (4.0 * d1[i] * d1[j] - 0.25 * d2[i] * d2[j]) / (3.0 * t2))
            }));
            acc.drift = acc.drift.max(traj.total_drift);
            Ok(())
        },
        TensorAcc::merge,
    )?;
    let (mean, se) = acc.finish(cfg.realizations);
    est.tensor = mean;
    est.std_err = se;
    est.max_mass_drift = acc.drift;
    let scale = analytic.max_abs().max(mean.max_abs()).max(f64::MIN_POSITIVE);
    est.relative_error = se.max_abs() / scale;
    est.within_tolerance = est.relative_error <= cfg.tolerance;
    if !est.within_tolerance {
        log::warn!(
            "Kubo estimate relative MC error {:.3} above target {:.3}",
            est.relative_error,
            cfg.tolerance
        );
    }
    Ok(est)
}

/// Damping of the field correlation used to make the time integral
/// converge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "time", rename_all = "kebab-case")]
pub enum Coherence {
    /// Bare correlation; the integral converges only through dephasing.
    #[default]
    Undamped,
    /// Factor `exp(−s/t)` in the particle's proper time.
    ProperTime(f64),
    /// Factor `exp(−(w·u)s/t)`: coherence time `t` in the bath frame.
    BathTime(f64),
}

impl Coherence {
    fn rate(&self, w: &FourVector<f64>, u: &FourVector<f64>) -> f64 {
        match *self {
            Coherence::Undamped => 0.0,
            Coherence::ProperTime(t) => 1.0 / t,
            Coherence::BathTime(t) => w.dot(u) / t,
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        match *self {
            Coherence::Undamped => Coherence::Undamped,
            Coherence::ProperTime(t) => Coherence::ProperTime(t * factor),
            Coherence::BathTime(t) => Coherence::BathTime(t * factor),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Coherence::ProperTime(t) | Coherence::BathTime(t) if !(t > 0.0) => Err(Error::InvalidArgument(
                format!("coherence time must be > 0, got {t}"),
            )),
            _ => Ok(()),
        }
    }

    /// Same coherence after all frequencies are multiplied by `factor`.
    pub fn for_frequency_scale(&self, factor: f64) -> Self {
        self.scaled(1.0 / factor)
    }
}

/// Time-integrated correlation `∫₀^{s_max} ds ⟨F^{μν}(x) F^{σρ}(x − s u)⟩
/// p_ν p_ρ / p²`, symmetrized in `(μ, σ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeIntegratedKubo {
    pub tensor: Tensor2<f64>,
    pub std_err: Tensor2<f64>,
    pub momentum: FourVector<f64>,
    pub s_max: f64,
    pub coherence: Coherence,
    /// Bound on the neglected tail `s > s_max` relative to the largest
    /// entry of the estimate.
    pub tail_fraction: f64,
    pub truncation_warning: bool,
    pub realizations: usize,
    pub modes: usize,
    pub seed: u64,
}

/// Tail fraction above which [`TimeIntegratedKubo::truncation_warning`] is set.
pub const TAIL_WARNING: f64 = 0.05;

/// Time-integrated Kubo estimator. The `s` integral of each mode along the
/// free worldline `x(s) = −s u` is done in closed form.
pub fn kubo_alpha_time_integrated(
    g: &SpectralDensity,
    p: &FourVector<f64>,
    w: &FourVector<f64>,
    s_max: f64,
    coherence: Coherence,
    cfg: &KuboConfig,
) -> Result<TimeIntegratedKubo> {
    let m = check_momentum(p)?;
    coherence.validate()?;
    if !(s_max > 0.0) || cfg.realizations < 2 || cfg.modes == 0 {
        return Err(Error::InvalidArgument(
            "need s_max > 0, at least two realizations and one mode".into(),
        ));
    }
    let u = p.scale(1.0 / m);
    let gamma = coherence.rate(w, &u);
    let sampler = FieldSampler::new(g)?.with_gauge(w)?;
    let origin = FourVector::zero();
    let acc = par_reduce(
        cfg.realizations,
        || (TensorAcc::new(), 0.0f64),
        |r, (acc, tail)| {
            let real = sampler.realize(cfg.modes, cfg.seed, r as u64)?;
            let pv = mixed_apply(&real.bivector_at(&origin), &u);
            let mut q = [0.0; 4];
            let mut tail_bound = 0.0;
            for t in &real.terms {
                let a = dot_low(&t.k_low, &u);
                let z = Complex64::new(gamma, a);
                let (integral, rest) = if z.norm() == 0.0 {
                    (Complex64::new(s_max, 0.0), f64::INFINITY)
                } else {
                    let decay = (-z * s_max).exp();
                    ((1.0 - decay) / z, decay.norm() / z.norm())
                };
                // ∫ F(−s u) ds = −Im(I) A − Re(I) B.
                let fa = mixed_apply(&t.a, &u);
                let fb = mixed_apply(&t.b, &u);
                for mu in 0..4 {
                    q[mu] -= integral.im * fa[mu] + integral.re * fb[mu];
                }
                let mag = fa.iter().chain(&fb).fold(0.0f64, |x, y| x.max(y.abs()));
                tail_bound += mag * rest;
            }
            let pmax = pv.iter().fold(0.0f64, |x, y| x.max(y.abs()));
            *tail += pmax * tail_bound;
            acc.add(std::array::from_fn(|i| std::array::from_fn(|j| 0.5 * (pv[i] * q[j] + q[i] * pv[j]))));
            Ok(())
        },
        |a, b| {
            a.0.merge(b.0);
            a.1 += b.1;
        },
    )?;
    let (mean, se) = acc.0.finish(cfg.realizations);
    let scale = mean.max_abs().max(f64::MIN_POSITIVE);
    let tail_fraction = acc.1 / cfg.realizations as f64 / scale;
    let truncation_warning = !(tail_fraction <= TAIL_WARNING);
    if truncation_warning {
        log::warn!("time-integrated Kubo tail estimate {tail_fraction:.3e} of the result; increase s_max or damping");
    }
    Ok(TimeIntegratedKubo {
        tensor: mean,
        std_err: se,
        momentum: *p,
        s_max,
        coherence,
        tail_fraction,
        truncation_warning,
        realizations: cfg.realizations,
        modes: cfg.modes,
        seed: cfg.seed,
    })
}

/// Correlation time extracted from the two Kubo estimators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CorrelationTime {
    pub tau_c: f64,
    pub std_err: f64,
}

/// Operational definition used throughout: `τ_c` is the least-squares ratio
/// of the time-integrated tensor to the small-`τ` tensor.
pub const TAU_C_DEFINITION: &str =
    "tau_c = argmin |A_int - tau_c A_small|^2 over all components (time-integrated over small-window Kubo tensor)";

pub fn correlation_time(small: &KuboEstimate, integrated: &TimeIntegratedKubo) -> CorrelationTime {
    ratio_with_error(
        &integrated.tensor,
        &integrated.std_err,
        &small.tensor.symmetrized(),
        &small.std_err,
    )
}

fn ratio_with_error(a: &Tensor2<f64>, sa: &Tensor2<f64>, b: &Tensor2<f64>, sb: &Tensor2<f64>) -> CorrelationTime {
    let mut ab = 0.0;
    let mut bb = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            ab += a.m[i][j] * b.m[i][j];
            bb += b.m[i][j] * b.m[i][j];
        }
    }
    let tau = ab / bb;
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += (b.m[i][j] * sa.m[i][j]).powi(2) + ((a.m[i][j] - 2.0 * tau * b.m[i][j]) * sb.m[i][j]).powi(2);
        }
    }
    CorrelationTime {
        tau_c: tau,
        std_err: var.sqrt() / bb,
    }
}
