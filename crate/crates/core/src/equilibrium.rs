//! Jüttner equilibrium `Ω_E = exp(−β w·p − γ p²)` and the identities tying
//! it to the diffusion generator.

use serde::{Deserialize, Serialize};

use crate::diffusion::{alpha, friction_drift};
use crate::error::{Error, Result};
use crate::minkowski::{unit_future, Covector, FourVector};
use crate::quadrature::{adaptive_gk, QuadResult};
use crate::scalar::Real;
use crate::spectral::BathParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JuttnerParams<T> {
    pub beta: T,
    /// Weight of `p²` in the exponent; only rescales a fixed mass shell.
    #[serde(default)]
    pub gamma: T,
    pub w: FourVector<T>,
    /// `ln` of the prefactor, so that densities far in the tail stay finite.
    #[serde(default)]
    pub log_normalization: T,
}

impl<T: Real> JuttnerParams<T> {
    pub fn new(beta: T, w: FourVector<T>) -> Result<Self> {
        if !(beta > T::zero()) {
            return Err(Error::InvalidArgument(format!("β must be > 0, got {beta}")));
        }
        let ww = w.norm_sq();
        if (ww - T::one()).abs() > T::tol(1e-12) * (w[0] * w[0]).max(T::one()) {
            return Err(Error::Frame(format!("Jüttner frame needs w·w = 1, got {ww}")));
        }
        unit_future(&w)?;
        Ok(JuttnerParams {
            beta,
            gamma: T::zero(),
            w,
            log_normalization: T::zero(),
        })
    }

    /// Matches the bath's `β` and `w`.
    pub fn for_bath(bath: &BathParams<T>) -> Result<Self> {
        Self::new(bath.beta, bath.w)
    }

    pub fn with_gamma(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_log_normalization(mut self, log_normalization: T) -> Self {
        self.log_normalization = log_normalization;
        self
    }

    /// `∂_ν ln Ω_E = −β w_ν − 2γ p_ν`, as lower-index components.
    fn log_gradient(&self, p: &FourVector<T>) -> Covector<T> {
        (self.w.scale(-self.beta) - p.scale(T::lit(2.0) * self.gamma)).lower()
    }
}

pub fn juttner_density<T: Real>(p: &FourVector<T>, params: &JuttnerParams<T>) -> T {
    (params.log_normalization - params.beta * params.w.dot(p) - params.gamma * p.norm_sq()).exp()
}

fn check_matches<T: Real>(bath: &BathParams<T>, params: &JuttnerParams<T>) -> Result<()> {
    let tol = T::tol(1e-12);
    let dw = (bath.w - params.w).max_abs();
    if (bath.beta - params.beta).abs() > tol * bath.beta || dw > tol * bath.w.max_abs() {
        return Err(Error::InvalidArgument(format!(
            "Jüttner parameters (β = {}, w = {:?}) do not match the bath (β = {}, w = {:?})",
            params.beta, params.w.0, bath.beta, bath.w.0
        )));
    }
    Ok(())
}

/// Equilibrium probability flux `α^{μν} ∂_ν Ω_E − b^μ Ω_E`.
///
/// Vanishes identically for `λ = β(ε − π_ε)` with the flux-zero friction sign.
pub fn flux_residual<T: Real>(
    p: &FourVector<T>,
    bath: &BathParams<T>,
    params: &JuttnerParams<T>,
) -> Result<FourVector<T>> {
    check_matches(bath, params)?;
    let a = alpha(p, bath)?;
    let omega = juttner_density(p, params);
    let diffusive = a.tensor().contract(&params.log_gradient(p));
    let b = friction_drift(p, bath)?;
    Ok(FourVector(std::array::from_fn(|i| (diffusive[i] - b[i]) * omega)))
}

/// Friction of the reversible diffusion, `α^{μν} ∂_ν ln Ω_E = −β α^{μν} w_ν`.
pub fn reversible_drift<T: Real>(
    p: &FourVector<T>,
    bath: &BathParams<T>,
    params: &JuttnerParams<T>,
) -> Result<FourVector<T>> {
    check_matches(bath, params)?;
    let a = alpha(p, bath)?;
    Ok(a.tensor().contract(&params.log_gradient(p)))
}

/// Measure in which a shell density is taken per unit of `d³p`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShellMeasure {
    /// `exp(−β p⁰) d³p`.
    Lebesgue,
    /// `exp(−β p⁰) d³p / p⁰`, the stationary measure of the diffusion.
    #[default]
    Invariant,
}

impl ShellMeasure {
    pub fn as_str(self) -> &'static str {
        match self {
            ShellMeasure::Lebesgue => "lebesgue",
            ShellMeasure::Invariant => "invariant",
        }
    }

    /// Unnormalized radial density `4π q² · weight(q)` per `dq`, with the
    /// Boltzmann factor shifted by `exp(βm)`.
    pub fn radial_density(self, q: f64, m: f64, beta: f64) -> f64 {
        let e = (m * m + q * q).sqrt();
        // e − m without cancellation for q ≪ m.
        let kinetic = q * q / (e + m);
        let base = 4.0 * std::f64::consts::PI * q * q * (-beta * kinetic).exp();
        match self {
            ShellMeasure::Lebesgue => base,
            ShellMeasure::Invariant => base / e,
        }
    }
}

/// `|p|` beyond which `exp(−β(p⁰ − m))` is below `1e-16`.
pub fn shell_cutoff(m: f64, beta: f64) -> f64 {
    let kinetic = 16.0 * std::f64::consts::LN_10 / beta;
    ((m + kinetic).powi(2) - m * m).sqrt()
}

/// `⟨f(|p|)⟩` under the Jüttner shell density in `measure`.
pub fn juttner_expectation(
    m: f64,
    beta: f64,
    measure: ShellMeasure,
    f: impl Fn(f64) -> f64,
) -> Result<QuadResult> {
    if !(beta > 0.0) || !(m >= 0.0) {
        return Err(Error::InvalidArgument(format!("need m ≥ 0 and β > 0, got m = {m}, β = {beta}")));
    }
    let qmax = shell_cutoff(m, beta);
    let rel = 1e-12;
    let z = adaptive_gk(|q| measure.radial_density(q, m, beta), 0.0, qmax, rel, 0.0, 2000);
    let num = adaptive_gk(|q| f(q) * measure.radial_density(q, m, beta), 0.0, qmax, rel, 0.0, 2000);
    let value = num.value / z.value;
    let error = value.abs() * (num.relative_error() + z.relative_error());
    let converged = num.converged && z.converged;
    if !converged {
        log::warn!("Jüttner moment quadrature above tolerance (relative error {:e})", error / value.abs());
    }
    Ok(QuadResult { value, error, converged })
}

/// Normalized moment `⟨|p|^order⟩`.
pub fn juttner_moment(m: f64, beta: f64, order: i32, measure: ShellMeasure) -> Result<QuadResult> {
    juttner_expectation(m, beta, measure, |q| q.powi(order))
}

/// `⟨p⁰⟩`.
pub fn mean_energy(m: f64, beta: f64, measure: ShellMeasure) -> Result<QuadResult> {
    juttner_expectation(m, beta, measure, |q| (m * m + q * q).sqrt())
}

/// `⟨p⁰ − m⟩`.
pub fn mean_kinetic_energy(m: f64, beta: f64, measure: ShellMeasure) -> Result<QuadResult> {
    juttner_expectation(m, beta, measure, |q| q * q / ((m * m + q * q).sqrt() + m))
}
