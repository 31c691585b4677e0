//! Spectral density of the thermal field and the bath scalars derived from it.
//!
//! A [`SpectralDensity`] is a non-negative measure on the forward light cone,
//! stored as a superposition of mass shells `k·k = μ²`. On each shell the
//! measure is given by a radial profile `g(|k|)` with respect to `d³k` in the
//! density's own rest frame `u`; in any other frame that reads
//! `g(|k|_u) (k·u) / k⁰ d³k`, which is Lorentz invariant. The massless shell
//! is the photon case; a mixture of shells approximates a general forward-cone
//! density.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conventions::FrictionSign;
use crate::error::{Error, Result};
use crate::minkowski::{dot, unit_future, Boost, FourVector};
use crate::quadrature::{adaptive_gk, adaptive_gk_pieces, gauss_legendre, QuadResult};
use crate::scalar::Real;

/// `exp(-β k) k⁴` drops below 1e-16 of its peak at `β k ≈ 50`.
const PLANCK_CUTOFF: f64 = 50.0;

/// Tabulated radial profile with linear interpolation, zero outside the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    k: Vec<f64>,
    g: Vec<f64>,
}

impl RadialTable {
    pub fn new(k: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if k.len() != g.len() || k.len() < 2 {
            return Err(Error::InvalidDensity(
                "table needs at least two (|k|, g) rows of equal length".into(),
            ));
        }
        if k[0] < 0.0 || k.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDensity(
                "table |k| must be non-negative and strictly increasing".into(),
            ));
        }
        if let Some(bad) = g.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidDensity(format!("negative or non-finite table entry {bad}")));
        }
        Ok(RadialTable { k, g })
    }

    /// Reads `(|k|, g)` rows; non-numeric rows (headers) are skipped.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let (mut k, mut g) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                continue;
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    k.push(a);
                    g.push(b);
                }
                _ if k.is_empty() => continue,
                _ => {
                    return Err(Error::InvalidDensity(format!(
                        "unparseable table row {:?}",
                        rec.iter().collect::<Vec<_>>()
                    )))
                }
            }
        }
        Self::new(k, g)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.k.len();
        if x < self.k[0] || x > self.k[n - 1] {
            return 0.0;
        }
        let i = match self.k.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let t = (x - self.k[i]) / (self.k[i + 1] - self.k[i]);
        self.g[i] * (1.0 - t) + self.g[i + 1] * t
    }

    pub fn nodes(&self) -> &[f64] {
        &self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }
}

/// Radial profile `g(|k|)` per `d³k` in the density rest frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// `g = norm / (|k| (exp(β|k|) − 1))`, i.e. the photon shell measure
    /// `δ(k²) d⁴k` weighted by the Bose factor.
    Planck { beta: f64, norm: f64 },
    /// All weight on the sphere `|k| = k0`, total mass `weight`.
    Monochromatic { k0: f64, weight: f64 },
    Table(RadialTable),
}

impl Profile {
    fn validate(&self) -> Result<()> {
        match self {
            Profile::Planck { beta, norm } => {
                if !(*beta > 0.0) || !(*norm >= 0.0) {
                    return Err(Error::InvalidDensity(format!(
                        "planck needs β > 0 and norm ≥ 0 (β = {beta}, norm = {norm})"
                    )));
                }
            }
            Profile::Monochromatic { k0, weight } => {
                if !(*k0 >= 0.0) || !(*weight >= 0.0) {
                    return Err(Error::InvalidDensity(format!(
                        "monochromatic needs k0 ≥ 0 and weight ≥ 0 (k0 = {k0}, weight = {weight})"
                    )));
                }
            }
            Profile::Table(_) => {}
        }
        Ok(())
    }

    /// `|k| g(|k|)`, finite at the origin for the Planck profile.
    pub fn k_g(&self, k: f64) -> f64 {
        match self {
            Profile::Planck { beta, norm } => {
                if k == 0.0 {
                    f64::INFINITY
                } else {
                    norm / (beta * k).exp_m1()
                }
            }
            Profile::Monochromatic { .. } => 0.0,
            Profile::Table(t) => k * t.eval(k),
        }
    }

    /// `|k|² g(|k|)`.
    pub fn k2_g(&self, k: f64) -> f64 {
        match self {
            Profile::Planck { beta, norm } => {
                if k == 0.0 {
                    norm / beta
                } else {
                    norm * k / (beta * k).exp_m1()
                }
            }
            Profile::Monochromatic { .. } => 0.0,
            Profile::Table(t) => k * k * t.eval(k),
        }
    }

    /// Radial extent beyond which the profile is zero or negligible.
    pub fn cutoff(&self) -> f64 {
        match self {
            Profile::Planck { beta, .. } => PLANCK_CUTOFF / beta,
            Profile::Monochromatic { k0, .. } => *k0,
            Profile::Table(t) => *t.k.last().unwrap(),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Table(t) => {
                let mut b = vec![0.0];
                b.extend(t.k.iter().copied().filter(|&k| k > 0.0));
                b
            }
            _ => vec![0.0, self.cutoff()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellComponent {
    /// Shell mass `μ ≥ 0` (`k·k = μ²`).
    pub mass: f64,
    pub profile: Profile,
}

/// Frame in which quadratures are carried out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadFrame {
    /// Spherical coordinates in the density rest frame (isotropic radial part).
    #[default]
    DensityRest,
    /// Spherical coordinates in the lab frame with direction-dependent
    /// radial cutoffs.
    Lab,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadOptions {
    pub rel_tol: f64,
    /// Absolute tolerance; needed for integrals that vanish.
    pub abs_tol: f64,
    pub frame: QuadFrame,
    /// Cap on the Gauss–Legendre order in `cos θ`.
    pub max_angular: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            frame: QuadFrame::DensityRest,
            max_angular: 128,
        }
    }
}

/// Non-negative spectral measure `G̃(k) dk` supported on the forward cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    components: Vec<ShellComponent>,
    frame: FourVector<f64>,
}

impl SpectralDensity {
    pub fn new(components: Vec<ShellComponent>, frame: FourVector<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidDensity("no shell components".into()));
        }
        for c in &components {
            if !(c.mass >= 0.0) {
                return Err(Error::InvalidDensity(format!(
                    "shell mass must be ≥ 0 (k² < 0 is outside the support), got {}",
                    c.mass
                )));
            }
            c.profile.validate()?;
        }
        let frame = unit_future(&frame)?;
        Ok(SpectralDensity { components, frame })
    }

    pub fn planck(beta: f64, norm: f64) -> Result<Self> {
        Self::single(0.0, Profile::Planck { beta, norm })
    }

    pub fn monochromatic(k0: f64, weight: f64) -> Result<Self> {
        Self::single(0.0, Profile::Monochromatic { k0, weight })
    }

    pub fn table(table: RadialTable) -> Result<Self> {
        Self::single(0.0, Profile::Table(table))
    }

    pub fn single(mass: f64, profile: Profile) -> Result<Self> {
        Self::new(vec![ShellComponent { mass, profile }], FourVector::at_rest(1.0))
    }

    /// Same measure, carried by a bath moving with four-velocity `u`.
    pub fn with_frame(mut self, u: FourVector<f64>) -> Result<Self> {
        self.frame = unit_future(&u)?;
        Ok(self)
    }

    /// Same measure with every `k` multiplied by `factor` (all mode
    /// frequencies scaled).
    pub fn scaled_frequencies(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidArgument("frequency scale must be > 0".into()));
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let profile = match &c.profile {
                    // g(k/f) d³(k/f)·… keeps the total mass: g' = g(k/f)/f³.
                    Profile::Planck { beta, norm } => Profile::Planck {
                        beta: beta / factor,
                        norm: norm / (factor * factor),
                    },
                    Profile::Monochromatic { k0, weight } => Profile::Monochromatic {
                        k0: k0 * factor,
                        weight: *weight,
                    },
                    Profile::Table(t) => Profile::Table(RadialTable {
                        k: t.k.iter().map(|k| k * factor).collect(),
                        g: t.g.iter().map(|g| g / factor.powi(3)).collect(),
                    }),
                };
                ShellComponent {
                    mass: c.mass * factor,
                    profile,
                }
            })
            .collect();
        SpectralDensity::new(components, self.frame)
    }

    pub fn components(&self) -> &[ShellComponent] {
        &self.components
    }

    /// Rest frame `u` of the measure.
    pub fn frame(&self) -> FourVector<f64> {
        self.frame
    }

    /// `∫ G̃(k) f(k) dk`.
    pub fn integrate(&self, f: impl Fn(&FourVector<f64>) -> f64, opts: &QuadOptions) -> QuadResult {
        let lab = Boost::from_rest_of(&self.frame).expect("frame validated at construction");
        let mut out = QuadResult::exact(0.0);
        for c in &self.components {
            let r = match (opts.frame, &c.profile) {
                (_, Profile::Monochromatic { k0, weight }) => {
                    let e0 = (c.mass * c.mass + k0 * k0).sqrt();
                    angular_adaptive(opts, |n| {
                        let k = lab.apply(&FourVector::new(e0, k0 * n[0], k0 * n[1], k0 * n[2]));
                        weight * f(&k)
                    })
                }
                (QuadFrame::DensityRest, profile) => {
                    integrate_rest_frame(&lab, c.mass, profile, &f, opts)
                }
                (QuadFrame::Lab, profile) => integrate_lab_frame(&self.frame, c.mass, profile, &f, opts),
            };
            out.value += r.value;
            out.error += r.error;
            out.converged &= r.converged;
        }
        out
    }

    /// Total mass `Z = ∫ G̃(k) dk`.
    pub fn total_mass(&self) -> QuadResult {
        self.integrate(|_| 1.0, &QuadOptions::default())
    }
}

/// Sphere average `(1/4π)∫ f(n) dΩ` with Gauss–Legendre in cos θ and the
/// trapezoid rule in φ.
fn sphere_average(order: usize, axis: &[f64; 3], f: &impl Fn([f64; 3]) -> f64) -> f64 {
    let (x, w) = gauss_legendre(order);
    let nphi = 2 * order;
    let (e1, e2) = orthonormal_pair(axis);
    let mut s = 0.0;
    for (ct, wt) in x.iter().zip(&w) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        let mut ring = 0.0;
        for j in 0..nphi {
            let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nphi as f64;
            let (sp, cp) = phi.sin_cos();
            let n: [f64; 3] =
                std::array::from_fn(|i| ct * axis[i] + st * (cp * e1[i] + sp * e2[i]));
            ring += f(n);
        }
        s += 0.5 * wt * ring / nphi as f64;
    }
    s
}

/// Two unit vectors completing `axis` to an orthonormal basis.
pub(crate) fn orthonormal_pair(axis: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if axis[0].abs() < 0.6 {
        [1.0, 0.0, 0.0]
    } else if axis[1].abs() < 0.6 {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let e1 = normalize(cross(axis, &helper));
    let e2 = cross(axis, &e1);
    (e1, e2)
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    a.map(|x| x / n)
}

fn axis_of(v: &FourVector<f64>) -> [f64; 3] {
    let s = v.spatial();
    let n = v.spatial_norm();
    if n > 1e-300 {
        s.map(|x| x / n)
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Repeats a quadrature with doubled angular order until two successive
/// results agree.
fn angular_doubling(opts: &QuadOptions, mut eval: impl FnMut(usize) -> QuadResult) -> QuadResult {
    let mut order = 8;
    let mut prev = eval(order);
    loop {
        let next_order = order * 2;
        if next_order > opts.max_angular {
            return QuadResult {
                converged: false,
                ..prev
            };
        }
        let next = eval(next_order);
        let diff = (next.value - prev.value).abs();
        let tol = (opts.rel_tol * next.value.abs()).max(opts.abs_tol).max(1e-300);
        if diff <= tol {
            return QuadResult {
                value: next.value,
                error: next.error + diff,
                converged: next.converged,
            };
        }
        prev = next;
        order = next_order;
    }
}

fn angular_adaptive(opts: &QuadOptions, f: impl Fn([f64; 3]) -> f64) -> QuadResult {
    angular_doubling(opts, |order| QuadResult::exact(sphere_average(order, &[0.0, 0.0, 1.0], &f)))
}

fn integrate_rest_frame(
    lab: &Boost<f64>,
    mass: f64,
    profile: &Profile,
    f: &impl Fn(&FourVector<f64>) -> f64,
    opts: &QuadOptions,
) -> QuadResult {
    let breaks = profile.breakpoints();
    angular_doubling(opts, |order| {
        adaptive_gk_pieces(
            |k| {
                let w = profile.k2_g(k);
                if w == 0.0 {
                    return 0.0;
                }
                let e = (mass * mass + k * k).sqrt();
                let avg = sphere_average(order, &[0.0, 0.0, 1.0], &|n| {
                    f(&lab.apply(&FourVector::new(e, k * n[0], k * n[1], k * n[2])))
                });
                4.0 * std::f64::consts::PI * w * avg
            },
            &breaks,
            opts.rel_tol * 0.1,
            opts.abs_tol * 0.1,
        )
    })
}

fn integrate_lab_frame(
    u: &FourVector<f64>,
    mass: f64,
    profile: &Profile,
    f: &impl Fn(&FourVector<f64>) -> f64,
    opts: &QuadOptions,
) -> QuadResult {
    let kcut = profile.cutoff();
    let kappa_max = (mass * mass + kcut * kcut).sqrt();
    let axis = axis_of(u);
    angular_doubling(opts, |order| {
        let value = sphere_average(order, &axis, &|n| {
            let un = u[1] * n[0] + u[2] * n[1] + u[3] * n[2];
            let kmax = kappa_max / (u[0] - un);
            let r = adaptive_gk(
                |k| {
                    let e = (mass * mass + k * k).sqrt();
                    let kv = FourVector::new(e, k * n[0], k * n[1], k * n[2]);
                    let kappa = dot(&kv, u);
                    let ku = (kappa * kappa - mass * mass).max(0.0).sqrt();
                    // k² (κ/k⁰) g(|k|_u) written via |k|_u g to stay finite at the apex.
                    let weight = if mass == 0.0 {
                        k * profile.k_g(ku)
                    } else {
                        k * k * kappa / e * profile.k_g(ku) / ku.max(1e-300)
                    };
                    if weight == 0.0 || !weight.is_finite() {
                        return 0.0;
                    }
                    weight * f(&kv)
                },
                0.0,
                kmax,
                opts.rel_tol * 0.1,
                opts.abs_tol * 0.1,
                2000,
            );
            4.0 * std::f64::consts::PI * r.value
        });
        QuadResult {
            value,
            error: 0.0,
            converged: true,
        }
    })
}

/// Thermal bath parameters entering the diffusion generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathParams<T> {
    pub beta: T,
    pub energy_density: T,
    pub pressure: T,
    /// Friction magnitude `λ ≥ 0`.
    pub friction: T,
    pub tau_c: T,
    pub w: FourVector<T>,
    #[serde(default)]
    pub friction_sign: FrictionSign,
}

impl<T: Real> BathParams<T> {
    /// Bath with the equilibrium friction magnitude `λ = β(ε − π_ε)`.
    pub fn new(beta: T, energy_density: T, pressure: T, tau_c: T, w: FourVector<T>) -> Result<Self> {
        let b = BathParams {
            beta,
            energy_density,
            pressure,
            friction: beta * (energy_density - pressure),
            tau_c,
            w,
            friction_sign: FrictionSign::FluxZero,
        };
        b.validate()?;
        Ok(b)
    }

    /// Overrides `λ` (perturbation studies).
    pub fn with_friction(mut self, friction: T) -> Result<Self> {
        self.friction = friction;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sign(mut self, sign: FrictionSign) -> Self {
        self.friction_sign = sign;
        self
    }

    pub fn with_frame(mut self, w: FourVector<T>) -> Result<Self> {
        self.w = w;
        self.validate()?;
        Ok(self)
    }

    /// `ε − π_ε`.
    pub fn spread(&self) -> T {
        self.energy_density - self.pressure
    }

    /// Signed friction coefficient multiplying `P^{μν} w_ν` in the drift.
    pub fn signed_friction(&self) -> T {
        self.friction * T::lit(self.friction_sign.sign())
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::tol(1e-12);
        let eps = self.energy_density;
        let pi = self.pressure;
        if !(self.beta > T::zero()) {
            return Err(Error::InvalidBath(format!("β must be > 0, got {}", self.beta)));
        }
        if !(pi >= T::zero()) || !(eps - pi >= -tol * eps.abs()) {
            return Err(Error::InvalidBath(format!(
                "need ε ≥ π_ε ≥ 0, got ε = {eps}, π_ε = {pi}"
            )));
        }
        if !(self.friction >= T::zero()) {
            return Err(Error::InvalidBath(format!("λ must be ≥ 0, got {}", self.friction)));
        }
        if !(self.tau_c > T::zero()) {
            return Err(Error::InvalidBath(format!("τ_c must be > 0, got {}", self.tau_c)));
        }
        // w·w cancels between components of size w⁰, so the check is
        // relative to (w⁰)².
        let ww = self.w.norm_sq();
        let w_scale = (self.w[0] * self.w[0]).max(T::one());
        if (ww - T::one()).abs() > tol * w_scale || self.w[0] <= T::zero() {
            return Err(Error::Frame(format!("bath velocity needs w·w = 1 and w⁰ > 0, got w·w = {ww}")));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BathParams<U> {
        BathParams {
            beta: U::lit(self.beta.to_f64_lossy()),
            energy_density: U::lit(self.energy_density.to_f64_lossy()),
            pressure: U::lit(self.pressure.to_f64_lossy()),
            friction: U::lit(self.friction.to_f64_lossy()),
            tau_c: U::lit(self.tau_c.to_f64_lossy()),
            w: self.w.cast(),
            friction_sign: self.friction_sign,
        }
    }
}

fn check_unit(w: &FourVector<f64>) -> Result<()> {
    let ww = w.norm_sq();
    if (ww - 1.0).abs() > 1e-12 * (w[0] * w[0]).max(1.0) || w[0] <= 0.0 {
        return Err(Error::Frame(format!("observer velocity needs w·w = 1, got {ww}")));
    }
    Ok(())
}

/// `ε = ∫ G̃(k) (k·w)² dk`.
pub fn energy_density(g: &SpectralDensity, w: &FourVector<f64>) -> Result<QuadResult> {
    energy_density_with(g, w, &QuadOptions::default())
}

pub fn energy_density_with(g: &SpectralDensity, w: &FourVector<f64>, opts: &QuadOptions) -> Result<QuadResult> {
    check_unit(w)?;
    Ok(g.integrate(|k| dot(k, w).powi(2), opts))
}

/// `π_ε = ⅓ ∫ G̃(k) ((k·w)² − k²) dk`.
pub fn pressure(g: &SpectralDensity, w: &FourVector<f64>) -> Result<QuadResult> {
    pressure_with(g, w, &QuadOptions::default())
}

pub fn pressure_with(g: &SpectralDensity, w: &FourVector<f64>, opts: &QuadOptions) -> Result<QuadResult> {
    check_unit(w)?;
    let r = g.integrate(|k| (dot(k, w).powi(2) - k.norm_sq()) / 3.0, opts);
    Ok(r)
}

/// Coincident-point moment tensor `T^{μν} = ∫ G̃(k) k^μ k^ν dk`.
pub fn moment_tensor(g: &SpectralDensity) -> [[f64; 4]; 4] {
    let mut opts = QuadOptions::default();
    // Off-diagonal entries may vanish; tolerate errors relative to the
    // Euclidean size of k.
    let size = g.integrate(|k| k.0.iter().map(|x| x * x).sum(), &opts).value;
    opts.abs_tol = opts.rel_tol * size;
    let mut t = [[0.0; 4]; 4];
    for mu in 0..4 {
        for nu in mu..4 {
            let v = g.integrate(|k| k[mu] * k[nu], &opts).value;
            t[mu][nu] = v;
            t[nu][mu] = v;
        }
    }
    t
}

/// Thermal current and the friction constant fitted from it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoseCurrent {
    /// Contravariant `J^μ`.
    pub current: FourVector<f64>,
    /// Least-squares `r` in `J = −(3r/2) w`.
    pub r: f64,
    /// `max|J + (3r/2) w| / max|J|`.
    pub fit_residual: f64,
    pub quadrature_error: f64,
}

/// `J_μ = −norm ∫ d³k k_μ / k⁰ (exp(β k·w) − 1)⁻¹` over the photon shell.
///
/// `norm` is the free overall constant of the charged-scalar trace; `1`
/// reproduces the bare integral.
pub fn bose_current(beta: f64, w: &FourVector<f64>) -> Result<BoseCurrent> {
    bose_current_with(beta, w, 1.0, 1e-10)
}

pub fn bose_current_with(beta: f64, w: &FourVector<f64>, norm: f64, rel_tol: f64) -> Result<BoseCurrent> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("β must be > 0, got {beta}")));
    }
    check_unit(w)?;
    let axis = axis_of(w);
    let opts = QuadOptions {
        rel_tol,
        ..QuadOptions::default()
    };
    let kappa_max = PLANCK_CUTOFF / beta;
    let mut lower = [0.0; 4];
    let mut qerr = 0.0;
    for (mu, out) in lower.iter_mut().enumerate() {
        let r = angular_doubling(&opts, |order| {
            let value = sphere_average(order, &axis, &|n| {
                let wn = w[1] * n[0] + w[2] * n[1] + w[3] * n[2];
                let slope = w[0] - wn;
                let comp = if mu == 0 { 1.0 } else { -n[mu - 1] };
                if comp == 0.0 {
                    return 0.0;
                }
                // d³k k_μ/k⁰ n_B = k² dk dΩ (k_μ/k) n_B(β k slope); k_μ/k = comp.
                let r = adaptive_gk(
                    |k| k * k * comp / (beta * k * slope).exp_m1(),
                    0.0,
                    kappa_max / slope,
                    rel_tol * 0.1,
                    0.0,
                    2000,
                );
                4.0 * std::f64::consts::PI * r.value
            });
            QuadResult::exact(value)
        });
        *out = -norm * r.value;
        qerr += r.error * norm;
    }
    let current = FourVector([lower[0], -lower[1], -lower[2], -lower[3]]);
    let ww: f64 = w.0.iter().map(|x| x * x).sum();
    let jw: f64 = (0..4).map(|i| current[i] * w[i]).sum();
    let r = -jw / (1.5 * ww);
    let resid = (0..4)
        .map(|i| (current[i] + 1.5 * r * w[i]).abs())
        .fold(0.0, f64::max);
    let fit_residual = resid / current.max_abs().max(1e-300);
    if fit_residual > 1e-6 {
        return Err(Error::Inconsistency(format!(
            "current is not parallel to w: relative residual {fit_residual:e}"
        )));
    }
    Ok(BoseCurrent {
        current,
        r,
        fit_residual,
        quadrature_error: qerr,
    })
}

/// Bath scalars from a spectral density: `ε`, `π_ε` by quadrature and
/// `λ = β(ε − π_ε)`.
pub fn bath_from_spectral(
    g: &SpectralDensity,
    beta: f64,
    w: &FourVector<f64>,
    tau_c: f64,
) -> Result<BathParams<f64>> {
    if !(beta > 0.0) || !(tau_c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need β > 0 and τ_c > 0, got β = {beta}, τ_c = {tau_c}"
        )));
    }
    let eps = energy_density(g, w)?;
    let pi = pressure(g, w)?;
    if !eps.converged || !pi.converged {
        log::warn!(
            "spectral quadrature did not reach tolerance (ε err {:e}, π err {:e})",
            eps.error,
            pi.error
        );
    }
    if !(eps.value > pi.value) {
        return Err(Error::InvalidBath(format!(
            "spectral density gives ε = {} ≤ π_ε = {}",
            eps.value, pi.value
        )));
    }
    BathParams::new(beta, eps.value, pi.value.max(0.0), tau_c, *w)
}

/// Config-file description of a spectral density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum SpectralSpec {
    Planck {
        beta: f64,
        #[serde(default = "one")]
        norm: f64,
    },
    Monochromatic {
        k0: f64,
        #[serde(default = "one")]
        weight: f64,
    },
    CustomTable {
        /// CSV file of `(|k|, g)` rows.
        #[serde(default)]
        path: Option<String>,
        /// Inline rows, used when `path` is absent.
        #[serde(default)]
        rows: Option<Vec<[f64; 2]>>,
    },
}

fn one() -> f64 {
    1.0
}

impl SpectralSpec {
    pub fn build(&self) -> Result<SpectralDensity> {
        match self {
            SpectralSpec::Planck { beta, norm } => SpectralDensity::planck(*beta, *norm),
            SpectralSpec::Monochromatic { k0, weight } => SpectralDensity::monochromatic(*k0, *weight),
            SpectralSpec::CustomTable { path, rows } => {
                let table = match (path, rows) {
                    (Some(p), _) => RadialTable::from_csv_path(p)?,
                    (None, Some(rows)) => {
                        RadialTable::new(rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect())?
                    }
                    (None, None) => {
                        return Err(Error::InvalidDensity("custom-table needs `path` or `rows`".into()))
                    }
                };
                SpectralDensity::table(table)
            }
        }
    }
}
