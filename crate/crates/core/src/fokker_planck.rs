//! Finite-volume solver for the momentum-space transport equation restricted
//! to the mass shell.
//!
//! The shell process is autonomous in the spatial momentum, with diffusion
//! matrix `A^{ij} = α^{ij}` and Itô drift `B^i`; a density `f` per `d³p`
//! evolves as `∂f/∂ς = τ_c ∂_i (A^{ij} ∂_j f − (B^i − ∂_j A^{ij}) f)`.
//! Fluxes use Scharfetter–Gummel exponential fitting, so a zero-flux state is
//! reproduced exactly cell by cell.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::{alpha_matrix, default_step, ito_drift};
use crate::equilibrium::ShellMeasure;
use crate::error::{Error, Result};
use crate::minkowski::{FourVector, Tensor2};
use crate::spectral::BathParams;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
/// Relative step of the shell derivatives of `A`.
const SHELL_FD_STEP: f64 = 1e-4;

fn energy(m: f64, q: f64) -> f64 {
    (m * m + q * q).sqrt()
}

/// `x / (eˣ − 1)`.
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Shell coefficients of the momentum process at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellCoefficients {
    /// `A^{ij} = α^{ij}` on the shell.
    pub a: [[f64; 3]; 3],
    /// `B^i`: spatial Itô drift on the shell.
    pub b: [f64; 3],
}

/// Coefficients of the autonomous 3D momentum process at spatial momentum
/// `p`, with `p⁰ = √(m² + |p|²)`.
pub fn reduce_to_shell(p: [f64; 3], m: f64, bath: &BathParams<f64>) -> Result<ShellCoefficients> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("mass must be > 0, got {m}")));
    }
    let p4 = FourVector::on_shell(m, p);
    let alpha = alpha_matrix(&p4, bath)?;
    let drift = ito_drift(&p4, bath, default_step(&p4))?.drift;
    Ok(ShellCoefficients {
        a: std::array::from_fn(|i| std::array::from_fn(|j| alpha.m[i + 1][j + 1])),
        b: [drift[1], drift[2], drift[3]],
    })
}

/// `∂_j A^{ij}` along the shell by central differences.
pub fn shell_divergence(p: [f64; 3], m: f64, bath: &BathParams<f64>) -> Result<[f64; 3]> {
    let h = SHELL_FD_STEP * m.max(norm3(&p));
    let mut d = [0.0; 3];
    for j in 0..3 {
        let mut hi = p;
        let mut lo = p;
        hi[j] += h;
        lo[j] -= h;
        let ah = alpha_matrix(&FourVector::on_shell(m, hi), bath)?;
        let al = alpha_matrix(&FourVector::on_shell(m, lo), bath)?;
        for (i, di) in d.iter_mut().enumerate() {
            *di += (ah.m[i + 1][j + 1] - al.m[i + 1][j + 1]) / (2.0 * h);
        }
    }
    Ok(d)
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Grid layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Geometry {
    /// `|p|` in the bath rest frame, isotropic densities.
    Radial { cells: usize },
    /// `(|p_⊥|, p_∥)` with the bath moving along `z`.
    Axisymmetric { perp: usize, par: usize },
}

/// Finite-volume momentum grid with zero-flux outer boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumGrid {
    pub mass: f64,
    pub p_max: f64,
    pub geometry: Geometry,
}

impl MomentumGrid {
    pub fn radial(mass: f64, p_max: f64, cells: usize) -> Result<Self> {
        Self::checked(mass, p_max, Geometry::Radial { cells }, cells)
    }

    /// Radial grid whose outer edge sits where `exp(−β(p⁰ − m))` has fallen
    /// by `e⁻⁴⁰` (well below `1e-12` of the mode).
    pub fn radial_for(mass: f64, beta: f64, cells: usize) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!("β must be > 0, got {beta}")));
        }
        Self::radial(mass, Self::cutoff(mass, beta), cells)
    }

    /// `|p|` at which `β(p⁰ − m) = 40`.
    pub fn cutoff(mass: f64, beta: f64) -> f64 {
        let e = mass + 40.0 / beta;
        (e * e - mass * mass).sqrt()
    }

    pub fn axisymmetric(mass: f64, p_max: f64, perp: usize, par: usize) -> Result<Self> {
        Self::checked(mass, p_max, Geometry::Axisymmetric { perp, par }, perp.min(par))
    }

    fn checked(mass: f64, p_max: f64, geometry: Geometry, min_cells: usize) -> Result<Self> {
        if !(mass > 0.0) || !(p_max > 0.0) || min_cells < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs m > 0, p_max > 0 and at least 2 cells per axis (m = {mass}, p_max = {p_max})"
            )));
        }
        Ok(MomentumGrid { mass, p_max, geometry })
    }

    pub fn len(&self) -> usize {
        match self.geometry {
            Geometry::Radial { cells } => cells,
            Geometry::Axisymmetric { perp, par } => perp * par,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn radial_cells(&self) -> Result<usize> {
        match self.geometry {
            Geometry::Radial { cells } => Ok(cells),
            _ => Err(Error::InvalidArgument("operation needs a radial grid".into())),
        }
    }

    /// Radial cell width, or `(Δp_⊥, Δp_∥)` for the 2D grid.
    pub fn spacing(&self) -> (f64, f64) {
        match self.geometry {
            Geometry::Radial { cells } => (self.p_max / cells as f64, 0.0),
            Geometry::Axisymmetric { perp, par } => (self.p_max / perp as f64, 2.0 * self.p_max / par as f64),
        }
    }

    /// Cell centres as `(|p_⊥| or |p|, p_∥ or 0)`.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let (h1, h2) = self.spacing();
        match self.geometry {
            Geometry::Radial { cells } => (0..cells).map(|i| ((i as f64 + 0.5) * h1, 0.0)).collect(),
            Geometry::Axisymmetric { perp, par } => (0..perp)
                .flat_map(|i| (0..par).map(move |j| ((i as f64 + 0.5) * h1, -self.p_max + (j as f64 + 0.5) * h2)))
                .collect(),
        }
    }

    /// Cell volumes in `d³p`.
    pub fn volumes(&self) -> Vec<f64> {
        let (h1, h2) = self.spacing();
        match self.geometry {
            Geometry::Radial { cells } => (0..cells)
                .map(|i| {
                    let (a, b) = (i as f64 * h1, (i + 1) as f64 * h1);
                    FOUR_PI / 3.0 * (b * b * b - a * a * a)
                })
                .collect(),
            Geometry::Axisymmetric { perp, par } => (0..perp)
                .flat_map(|i| {
                    let (a, b) = (i as f64 * h1, (i + 1) as f64 * h1);
                    std::iter::repeat_n(std::f64::consts::PI * (b * b - a * a) * h2, par)
                })
                .collect(),
        }
    }

    /// Shell energy at each cell centre.
    pub fn energies(&self) -> Vec<f64> {
        self.centers()
            .iter()
            .map(|&(a, b)| energy(self.mass, (a * a + b * b).sqrt()))
            .collect()
    }
}

/// Density per `d³p` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub density: Vec<f64>,
    pub time: f64,
}

impl GridState {
    /// `f(|p|)` sampled at cell centres and normalized to unit probability.
    pub fn from_fn(grid: &MomentumGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let density: Vec<f64> = grid.centers().iter().map(|&(a, b)| f(a, b)).collect();
        let mut s = GridState { density, time: 0.0 };
        let total = s.total_probability(grid);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument("initial density must have positive finite mass".into()));
        }
        s.density.iter_mut().for_each(|d| *d /= total);
        Ok(s)
    }

    pub fn total_probability(&self, grid: &MomentumGrid) -> f64 {
        self.density.iter().zip(grid.volumes()).map(|(f, v)| f * v).sum()
    }

    /// Probability per cell.
    pub fn cell_probabilities(&self, grid: &MomentumGrid) -> Vec<f64> {
        self.density.iter().zip(grid.volumes()).map(|(f, v)| f * v).collect()
    }

    /// `Σ |P_i − Q_i|` between cell probabilities.
    pub fn l1_distance(&self, other: &GridState, grid: &MomentumGrid) -> f64 {
        self.density
            .iter()
            .zip(&other.density)
            .zip(grid.volumes())
            .map(|((a, b), v)| (a - b).abs() * v)
            .sum()
    }

    pub fn write_csv(&self, grid: &MomentumGrid, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match grid.geometry {
            Geometry::Radial { .. } => {
                w.write_record(["p", "density", "radial_density"])?;
                for (&(q, _), f) in grid.centers().iter().zip(&self.density) {
                    w.write_record([format!("{q:e}"), format!("{f:e}"), format!("{:e}", FOUR_PI * q * q * f)])?;
                }
            }
            Geometry::Axisymmetric { .. } => {
                w.write_record(["p_perp", "p_par", "density"])?;
                for (&(a, b), f) in grid.centers().iter().zip(&self.density) {
                    w.write_record([format!("{a:e}"), format!("{b:e}"), format!("{f:e}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Radial coefficients at `|p| = q` in the bath rest frame: diffusion
/// `a_∥`, and the effective velocity `v = B_r − (∂_j A^{ij}) n_i` entering
/// the flux `J = v f − a_∥ f′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialCoefficients {
    pub a_par: f64,
    pub a_perp: f64,
    pub drift: f64,
    pub velocity: f64,
}

/// For an isotropic `A = a_⊥(1 − n n) + a_∥ n n` the divergence is
/// `n (a_∥′ + 2(a_∥ − a_⊥)/q)`.
pub fn radial_coefficients(q: f64, m: f64, bath: &BathParams<f64>) -> Result<RadialCoefficients> {
    if !(q > 0.0) {
        return Err(Error::InvalidArgument(format!("radial coefficients need q > 0, got {q}")));
    }
    check_bath_at_rest(bath)?;
    let c = reduce_to_shell([0.0, 0.0, q], m, bath)?;
    let h = SHELL_FD_STEP * m.max(q);
    let a_at = |x: f64| alpha_matrix(&FourVector::on_shell(m, [0.0, 0.0, x]), bath).map(|a| a.m[3][3]);
    let a_prime = (a_at(q + h)? - a_at(q - h)?) / (2.0 * h);
    let a_par = c.a[2][2];
    let a_perp = c.a[0][0];
    Ok(RadialCoefficients {
        a_par,
        a_perp,
        drift: c.b[2],
        velocity: c.b[2] - a_prime - 2.0 * (a_par - a_perp) / q,
    })
}

fn check_bath_at_rest(bath: &BathParams<f64>) -> Result<()> {
    let w = bath.w;
    if (w[1].abs() + w[2].abs() + w[3].abs()) > 1e-12 * w[0] {
        return Err(Error::Frame(
            "the radial geometry needs the bath at rest; use the axisymmetric grid".into(),
        ));
    }
    Ok(())
}

/// Two-point flux coefficients: the flux out of cell `i` through face
/// `i + ½` is `up[i] f_i − down[i] f_{i+1}`.
#[derive(Clone, Debug)]
pub struct RadialOperator {
    up: Vec<f64>,
    down: Vec<f64>,
    /// Per-face Péclet number `v h / a`.
    peclet: Vec<f64>,
    volumes: Vec<f64>,
    dt_max: f64,
}

impl RadialOperator {
    /// Operator with coefficients from the bath, scaled by `τ_c`.
    pub fn new(grid: &MomentumGrid, bath: &BathParams<f64>) -> Result<Self> {
        grid.radial_cells()?;
        let m = grid.mass;
        let tau_c = bath.tau_c;
        let faces = face_positions(grid)?;
        let coeffs: Vec<RadialCoefficients> = faces
            .iter()
            .map(|&q| radial_coefficients(q, m, bath))
            .collect::<Result<_>>()?;
        Self::from_face_values(
            grid,
            coeffs.iter().map(|c| tau_c * c.a_par).collect(),
            coeffs.iter().map(|c| tau_c * c.velocity).collect(),
        )
    }

    /// Operator for `∂f = ∇·(a(q) n n ∇f − v(q) n f)` with user coefficients
    /// along `n = p/|p|`.
    pub fn from_coefficients(grid: &MomentumGrid, a: impl Fn(f64) -> f64, v: impl Fn(f64) -> f64) -> Result<Self> {
        let faces = face_positions(grid)?;
        Self::from_face_values(grid, faces.iter().map(|&q| a(q)).collect(), faces.iter().map(|&q| v(q)).collect())
    }

    fn from_face_values(grid: &MomentumGrid, a: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let (h, _) = grid.spacing();
        let volumes = grid.volumes();
        let n = volumes.len();
        let mut up = Vec::with_capacity(n - 1);
        let mut down = Vec::with_capacity(n - 1);
        let mut peclet = Vec::with_capacity(n - 1);
        for (i, (&af, &vf)) in a.iter().zip(&v).enumerate() {
            if !(af > 0.0) {
                return Err(Error::InvalidBath(format!(
                    "radial diffusion must be positive, got {af} at face {i}"
                )));
            }
            let q = (i + 1) as f64 * h;
            let area = FOUR_PI * q * q;
            let pe = vf * h / af;
            up.push(area * af / h * bernoulli(-pe));
            down.push(area * af / h * bernoulli(pe));
            peclet.push(pe);
        }
        let mut dt_max = f64::INFINITY;
        for i in 0..n {
            let out = if i + 1 < n { up[i] } else { 0.0 } + if i > 0 { down[i - 1] } else { 0.0 };
            if out > 0.0 {
                dt_max = dt_max.min(volumes[i] / out);
            }
        }
        Ok(RadialOperator {
            up,
            down,
            peclet,
            volumes,
            dt_max,
        })
    }

    /// Largest explicit step keeping the update positive.
    pub fn stable_step(&self) -> f64 {
        self.dt_max
    }

    /// Probability fluxes through interior faces.
    pub fn fluxes(&self, f: &[f64]) -> Vec<f64> {
        (0..self.up.len()).map(|i| self.up[i] * f[i] - self.down[i] * f[i + 1]).collect()
    }

    fn step(&self, f: &mut [f64], dt: f64, flux: &mut [f64]) {
        for i in 0..flux.len() {
            flux[i] = self.up[i] * f[i] - self.down[i] * f[i + 1];
        }
        for i in 0..f.len() {
            let net = if i < flux.len() { flux[i] } else { 0.0 } - if i > 0 { flux[i - 1] } else { 0.0 };
            f[i] -= dt * net / self.volumes[i];
        }
    }

    /// Discrete zero-flux state: `f_{i+1}/f_i = up_i/down_i = exp(Pe_i)`.
    pub fn zero_flux_state(&self) -> Vec<f64> {
        let mut log_f = vec![0.0; self.volumes.len()];
        for i in 0..self.peclet.len() {
            log_f[i + 1] = log_f[i] + self.peclet[i];
        }
        let top = log_f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut f: Vec<f64> = log_f.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = f.iter().zip(&self.volumes).map(|(a, v)| a * v).sum();
        f.iter_mut().for_each(|x| *x /= total);
        f
    }
}

fn face_positions(grid: &MomentumGrid) -> Result<Vec<f64>> {
    let n = grid.radial_cells()?;
    let (h, _) = grid.spacing();
    Ok((1..n).map(|i| i as f64 * h).collect())
}

/// Explicit finite-volume march of `steps` steps of size `dt`.
pub fn time_march(
    grid: &MomentumGrid,
    state: &GridState,
    bath: &BathParams<f64>,
    dt: f64,
    steps: usize,
) -> Result<GridState> {
    match grid.geometry {
        Geometry::Radial { .. } => march_radial(&RadialOperator::new(grid, bath)?, state, dt, steps),
        Geometry::Axisymmetric { .. } => AxisymmetricOperator::new(grid, bath)?.march(state, dt, steps),
    }
}

/// March with a prebuilt radial operator.
pub fn march_radial(op: &RadialOperator, state: &GridState, dt: f64, steps: usize) -> Result<GridState> {
    if state.density.len() != op.volumes.len() {
        return Err(Error::InvalidArgument("state does not match the grid".into()));
    }
    if !(dt > 0.0) || dt > op.dt_max {
        return Err(Error::Stability {
            dt,
            suggested: 0.9 * op.dt_max,
        });
    }
    let mut f = state.density.clone();
    let mut flux = vec![0.0; op.up.len()];
    for _ in 0..steps {
        op.step(&mut f, dt, &mut flux);
    }
    Ok(GridState {
        density: f,
        time: state.time + dt * steps as f64,
    })
}

/// Candidate `exp(−β p⁰) · μ(p⁰)` fitted to a profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFit {
    pub measure: ShellMeasure,
    /// Weighted least-squares slope of `−ln(f/μ)` against `p⁰`.
    pub fitted_beta: f64,
    /// L¹ distance between cell probabilities at the bath `β`.
    pub l1_at_bath_beta: f64,
    pub l1_at_fitted_beta: f64,
}

/// Converged stationary profile with diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryProfile {
    pub state: GridState,
    /// Largest face flux relative to the largest one-sided flux term.
    pub max_relative_flux: f64,
    /// L¹ change per unit time over the certification march.
    pub l1_rate: f64,
    /// L¹ change per unit time after each marching chunk.
    pub history: Vec<f64>,
    pub fits: Vec<MeasureFit>,
    pub method: StationaryMethod,
}

/// How the stationary state is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StationaryMethod {
    /// Solve the discrete zero-flux condition face by face, then certify
    /// stationarity by a short march.
    #[default]
    ZeroFlux,
    /// March from an isotropic Maxwellian until the L¹ change per unit time
    /// falls below the tolerance.
    March { max_steps: usize },
}

const CERTIFY_STEPS: usize = 1000;

/// Stationary density of the radial problem.
pub fn stationary_profile(
    grid: &MomentumGrid,
    bath: &BathParams<f64>,
    tol: f64,
    method: StationaryMethod,
) -> Result<StationaryProfile> {
    let op = RadialOperator::new(grid, bath)?;
    let dt = 0.9 * op.dt_max;
    let (state, history) = match method {
        StationaryMethod::ZeroFlux => (
            GridState {
                density: op.zero_flux_state(),
                time: 0.0,
            },
            Vec::new(),
        ),
        StationaryMethod::March { max_steps } => {
            let m = grid.mass;
            let mut s = GridState::from_fn(grid, |q, _| (-bath.beta * q * q / (2.0 * m)).exp())?;
            let chunk = CERTIFY_STEPS;
            let mut history = Vec::new();
            let mut done = 0;
            loop {
                let next = march_radial(&op, &s, dt, chunk)?;
                let rate = next.l1_distance(&s, grid) / (dt * chunk as f64);
                history.push(rate);
                s = next;
                done += chunk;
                if rate < tol {
                    break;
                }
                if done >= max_steps {
                    return Err(Error::NonConvergence {
                        iterations: done,
                        residual: rate,
                        history,
                    });
                }
            }
            (s, history)
        }
    };
    let certified = march_radial(&op, &state, dt, CERTIFY_STEPS)?;
    let l1_rate = certified.l1_distance(&state, grid) / (dt * CERTIFY_STEPS as f64);
    if !(l1_rate < tol) {
        let mut history = history;
        history.push(l1_rate);
        return Err(Error::NonConvergence {
            iterations: CERTIFY_STEPS,
            residual: l1_rate,
            history,
        });
    }
    let fluxes = op.fluxes(&state.density);
    let max_relative_flux = fluxes
        .iter()
        .enumerate()
        .map(|(i, fl)| fl.abs() / (op.up[i] * state.density[i]).max(op.down[i] * state.density[i + 1]).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let fits = [ShellMeasure::Lebesgue, ShellMeasure::Invariant]
        .iter()
        .map(|&mu| fit_measure(grid, &state, mu, bath.beta))
        .collect();
    Ok(StationaryProfile {
        state,
        max_relative_flux,
        l1_rate,
        history,
        fits,
        method,
    })
}

fn measure_weight(measure: ShellMeasure, e: f64) -> f64 {
    match measure {
        ShellMeasure::Lebesgue => 1.0,
        ShellMeasure::Invariant => 1.0 / e,
    }
}

/// Cell probabilities of `exp(−β(p⁰ − m)) μ(p⁰)` on the grid.
pub fn candidate_state(grid: &MomentumGrid, measure: ShellMeasure, beta: f64) -> Result<GridState> {
    let m = grid.mass;
    GridState::from_fn(grid, |a, b| {
        let q2 = a * a + b * b;
        let e = energy(m, q2.sqrt());
        (-beta * q2 / (e + m)).exp() * measure_weight(measure, e)
    })
}

/// Fits `β` of `exp(−β p⁰) μ` to a radial state by weighted least squares on
/// `ln(f/μ)` with cell probabilities as weights.
pub fn fit_measure(grid: &MomentumGrid, state: &GridState, measure: ShellMeasure, bath_beta: f64) -> MeasureFit {
    let energies = grid.energies();
    let probs = state.cell_probabilities(grid);
    let pts: Vec<(f64, f64, f64)> = energies
        .iter()
        .zip(&state.density)
        .zip(&probs)
        .filter(|((_, f), p)| **f > 0.0 && **p > 0.0)
        .map(|((e, f), p)| (*e, (f / measure_weight(measure, *e)).ln(), *p))
        .collect();
    let fitted_beta = -weighted_slope(&pts);
    let l1 = |beta: f64| {
        candidate_state(grid, measure, beta)
            .map(|c| c.l1_distance(state, grid))
            .unwrap_or(f64::NAN)
    };
    MeasureFit {
        measure,
        fitted_beta,
        l1_at_bath_beta: l1(bath_beta),
        l1_at_fitted_beta: l1(fitted_beta),
    }
}

/// Slope of `y` against `x` for points `(x, y, weight)`.
pub(crate) fn weighted_slope(pts: &[(f64, f64, f64)]) -> f64 {
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Probability of a radial state as a function of `|p|`, for comparison
/// with histograms on other bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub mass: f64,
    /// Cell edges `0 = q_0 < … < q_n`.
    pub edges: Vec<f64>,
    /// Probability per cell.
    pub probabilities: Vec<f64>,
}

impl RadialProfile {
    pub fn from_state(grid: &MomentumGrid, state: &GridState) -> Result<Self> {
        let n = grid.radial_cells()?;
        let (h, _) = grid.spacing();
        Ok(RadialProfile {
            mass: grid.mass,
            edges: (0..=n).map(|i| i as f64 * h).collect(),
            probabilities: state.cell_probabilities(grid),
        })
    }

    /// Cumulative probability up to `q`, linear within cells.
    pub fn cdf(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            if q >= b {
                acc += p;
            } else {
                if q > a {
                    acc += p * (q - a) / (b - a);
                }
                break;
            }
        }
        acc
    }

    /// Mass in `[a, b)`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }

    /// Same measure with the Boltzmann factor changed by `exp(−Δβ p⁰)`,
    /// renormalized.
    pub fn reweighted(&self, delta_beta: f64) -> Self {
        let m = self.mass;
        let mut probs: Vec<f64> = self
            .probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = 0.5 * (self.edges[i] + self.edges[i + 1]);
                p * (-delta_beta * q * q / (energy(m, q) + m)).exp()
            })
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        RadialProfile {
            mass: m,
            edges: self.edges.clone(),
            probabilities: probs,
        }
    }

    /// Inverse CDF; `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if acc + p > u && *p > 0.0 {
                let (a, b) = (self.edges[i], self.edges[i + 1]);
                return a + (b - a) * (u - acc) / p;
            }
            acc += p;
        }
        *self.edges.last().unwrap()
    }

    pub fn mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| p * f(0.5 * (self.edges[i] + self.edges[i + 1])))
            .sum()
    }
}

/// Explicit operator on the `(|p_⊥|, p_∥)` grid including the cross
/// diffusion `A^{⊥∥}`.
pub struct AxisymmetricOperator {
    perp: usize,
    par: usize,
    h_perp: f64,
    h_par: f64,
    volumes: Vec<f64>,
    /// Per perpendicular face `(i + ½, j)`: `(a_⊥⊥, a_⊥∥, v_⊥)` times `τ_c`.
    perp_faces: Vec<[f64; 3]>,
    /// Per parallel face `(i, j + ½)`: `(a_∥∥, a_∥⊥, v_∥)` times `τ_c`.
    par_faces: Vec<[f64; 3]>,
    dt_max: f64,
}

fn axisymmetric_coefficients(rho: f64, z: f64, m: f64, bath: &BathParams<f64>) -> Result<[f64; 5]> {
    let p = [rho, 0.0, z];
    let c = reduce_to_shell(p, m, bath)?;
    let div = shell_divergence(p, m, bath)?;
    Ok([c.a[0][0], c.a[0][2], c.a[2][2], c.b[0] - div[0], c.b[2] - div[2]])
}

impl AxisymmetricOperator {
    pub fn new(grid: &MomentumGrid, bath: &BathParams<f64>) -> Result<Self> {
        let (perp, par) = match grid.geometry {
            Geometry::Axisymmetric { perp, par } => (perp, par),
            _ => return Err(Error::InvalidArgument("operation needs an axisymmetric grid".into())),
        };
        let w = bath.w;
        if w[1].abs() + w[2].abs() > 1e-12 * w[0] {
            return Err(Error::Frame("the axisymmetric grid needs the bath moving along z".into()));
        }
        let (h1, h2) = grid.spacing();
        let m = grid.mass;
        let tc = bath.tau_c;
        let z_of = |j: f64| -grid.p_max + j * h2;
        let mut perp_faces = Vec::with_capacity((perp - 1) * par);
        for i in 1..perp {
            for j in 0..par {
                let c = axisymmetric_coefficients(i as f64 * h1, z_of(j as f64 + 0.5), m, bath)?;
                perp_faces.push([tc * c[0], tc * c[1], tc * c[3]]);
            }
        }
        let mut par_faces = Vec::with_capacity(perp * (par - 1));
        for i in 0..perp {
            for j in 1..par {
                let c = axisymmetric_coefficients((i as f64 + 0.5) * h1, z_of(j as f64), m, bath)?;
                par_faces.push([tc * c[2], tc * c[1], tc * c[4]]);
            }
        }
        let volumes = grid.volumes();
        let mut op = AxisymmetricOperator {
            perp,
            par,
            h_perp: h1,
            h_par: h2,
            volumes,
            perp_faces,
            par_faces,
            dt_max: f64::INFINITY,
        };
        op.dt_max = op.stable_step_estimate();
        Ok(op)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.par + j
    }

    fn perp_area(&self, i: usize) -> f64 {
        std::f64::consts::TAU * i as f64 * self.h_perp * self.h_par
    }

    fn par_area(&self, i: usize) -> f64 {
        let (a, b) = (i as f64 * self.h_perp, (i + 1) as f64 * self.h_perp);
        std::f64::consts::PI * (b * b - a * a)
    }

    /// Bound from the diagonal of the two-point part plus the magnitude of
    /// the cross terms.
    fn stable_step_estimate(&self) -> f64 {
        let mut out = vec![0.0; self.volumes.len()];
        for i in 0..self.perp - 1 {
            for j in 0..self.par {
                let [a, ax, v] = self.perp_faces[i * self.par + j];
                let k = self.perp_area(i + 1) / self.h_perp;
                let pe = v * self.h_perp / a;
                let cross = self.perp_area(i + 1) * ax.abs() / self.h_par;
                out[self.idx(i, j)] += k * a * bernoulli(-pe) + cross;
                out[self.idx(i + 1, j)] += k * a * bernoulli(pe) + cross;
            }
        }
        for i in 0..self.perp {
            for j in 0..self.par - 1 {
                let [a, ax, v] = self.par_faces[i * (self.par - 1) + j];
                let k = self.par_area(i) / self.h_par;
                let pe = v * self.h_par / a;
                let cross = self.par_area(i) * ax.abs() / self.h_perp;
                out[self.idx(i, j)] += k * a * bernoulli(-pe) + cross;
                out[self.idx(i, j + 1)] += k * a * bernoulli(pe) + cross;
            }
        }
        out.iter()
            .zip(&self.volumes)
            .filter(|(o, _)| **o > 0.0)
            .map(|(o, v)| v / o)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn stable_step(&self) -> f64 {
        self.dt_max
    }

    fn d_par(&self, f: &[f64], i: usize, j: usize) -> f64 {
        let lo = if j > 0 { j - 1 } else { j };
        let hi = if j + 1 < self.par { j + 1 } else { j };
        (f[self.idx(i, hi)] - f[self.idx(i, lo)]) / ((hi - lo) as f64 * self.h_par)
    }

    fn d_perp(&self, f: &[f64], i: usize, j: usize) -> f64 {
        let lo = if i > 0 { i - 1 } else { i };
        let hi = if i + 1 < self.perp { i + 1 } else { i };
        (f[self.idx(hi, j)] - f[self.idx(lo, j)]) / ((hi - lo) as f64 * self.h_perp)
    }

    /// `d(V f)/dς` per cell.
    pub fn rate(&self, f: &[f64]) -> Vec<f64> {
        let mut net = vec![0.0; f.len()];
        for i in 0..self.perp - 1 {
            for j in 0..self.par {
                let [a, ax, v] = self.perp_faces[i * self.par + j];
                let pe = v * self.h_perp / a;
                let (l, r) = (self.idx(i, j), self.idx(i + 1, j));
                let two_point = a / self.h_perp * (bernoulli(-pe) * f[l] - bernoulli(pe) * f[r]);
                let cross = -ax * 0.5 * (self.d_par(f, i, j) + self.d_par(f, i + 1, j));
                let flux = self.perp_area(i + 1) * (two_point + cross);
                net[l] -= flux;
                net[r] += flux;
            }
        }
        for i in 0..self.perp {
            for j in 0..self.par - 1 {
                let [a, ax, v] = self.par_faces[i * (self.par - 1) + j];
                let pe = v * self.h_par / a;
                let (l, r) = (self.idx(i, j), self.idx(i, j + 1));
                let two_point = a / self.h_par * (bernoulli(-pe) * f[l] - bernoulli(pe) * f[r]);
                let cross = -ax * 0.5 * (self.d_perp(f, i, j) + self.d_perp(f, i, j + 1));
                let flux = self.par_area(i) * (two_point + cross);
                net[l] -= flux;
                net[r] += flux;
            }
        }
        net
    }

    pub fn march(&self, state: &GridState, dt: f64, steps: usize) -> Result<GridState> {
        if state.density.len() != self.volumes.len() {
            return Err(Error::InvalidArgument("state does not match the grid".into()));
        }
        if !(dt > 0.0) || dt > self.dt_max {
            return Err(Error::Stability {
                dt,
                suggested: 0.9 * self.dt_max,
            });
        }
        let mut f = state.density.clone();
        let scale = f.iter().cloned().fold(0.0, f64::max);
        for _ in 0..steps {
            let r = self.rate(&f);
            for (k, x) in f.iter_mut().enumerate() {
                *x += dt * r[k] / self.volumes[k];
            }
            if f.iter().any(|x| *x < -1e-12 * scale) {
                return Err(Error::Stability {
                    dt,
                    suggested: 0.5 * dt,
                });
            }
        }
        Ok(GridState {
            density: f,
            time: state.time + dt * steps as f64,
        })
    }
}

/// Contravariant diffusion tensor restricted to the spatial block.
pub fn spatial_block(t: &Tensor2<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| t.m[i + 1][j + 1]))
}
