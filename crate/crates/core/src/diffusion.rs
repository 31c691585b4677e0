//! Momentum-space diffusion tensor `α^{μν} = P^{μσ} C_{σρ} P^{ρν}`, the
//! friction drift and the Itô drift of the generator `∂_μ α^{μν} ∂_ν + b·∂`.
//!
//! Everything here is generic over the scalar type. `α` is degenerate along
//! the lowered momentum `p_ν` and positive semidefinite whenever
//! `ε ≥ π_ε ≥ 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen4;
use crate::minkowski::{scale_with_floor, Boost, FourVector, Tensor2};
use crate::scalar::Real;
use crate::spectral::BathParams;

/// Degeneracy tolerance, relative to `max|α| · max|p|`.
const DEGENERACY_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted as PSD, relative to `max|α|`.
const PSD_TOL: f64 = 1e-10;
/// Eigenvalues of `2α` below this fraction of the scale are set to zero.
const CLAMP_TOL: f64 = 1e-12;
/// Eigenvalues of `2α` below `-INDEFINITE_TOL · scale` are a hard error.
const INDEFINITE_TOL: f64 = 1e-8;
/// Richardson error estimates above this fraction of `|drift|` raise a warning.
const DRIFT_ACCURACY: f64 = 1e-6;

fn check_momentum<T: Real>(p: &FourVector<T>) -> Result<T> {
    let p2 = p.norm_sq();
    if !(p2 > T::zero()) || !p2.is_finite() {
        return Err(Error::OffShell(p2.to_f64_lossy()));
    }
    Ok(p2)
}

/// `P^{μν} = η^{μν} − p^μ p^ν / p²`, both indices up.
pub fn projector<T: Real>(p: &FourVector<T>) -> Result<Tensor2<T>> {
    let p2 = check_momentum(p)?;
    Ok(projector_unchecked(p, p2))
}

fn projector_unchecked<T: Real>(p: &FourVector<T>, p2: T) -> Tensor2<T> {
    Tensor2::metric() - p.outer(p).scale(T::one() / p2)
}

/// `C_{σρ} = 2π_ε η_{σρ} − (ε + π_ε)((w·p)²/p² η_{σρ} + w_σ w_ρ)`, both
/// indices down.
pub fn c_tensor<T: Real>(p: &FourVector<T>, bath: &BathParams<T>) -> Result<Tensor2<T>> {
    let p2 = check_momentum(p)?;
    Ok(c_tensor_unchecked(p, p2, bath))
}

fn c_tensor_unchecked<T: Real>(p: &FourVector<T>, p2: T, bath: &BathParams<T>) -> Tensor2<T> {
    let (eps, pi) = (bath.energy_density, bath.pressure);
    let wp = bath.w.dot(p);
    let eta = Tensor2::<T>::metric();
    let wl = FourVector(bath.w.lower().0);
    eta.scale(T::lit(2.0) * pi - (eps + pi) * wp * wp / p2) - wl.outer(&wl).scale(eps + pi)
}

/// Raw `α` without invariant checks; used inside finite differences where
/// `p` is off the shell by design.
///
/// Built in the bath rest frame from the tetrad of the momentum: with
/// `γ = p⁰/√p²`, the unit vector `e = (|q|, p⁰ q̂)/√p²` along the transverse
/// frame and `Q` the spatial projector orthogonal to `q̂`,
/// `α = (ε − π_ε) e e + ((ε + π_ε) γ² − 2π_ε) Q`. This equals `P C P` but
/// avoids the `γ⁴` cancellation between the `P` and `ŵŵ` terms of the
/// lab form, and `p_μ e^μ` vanishes exactly. Other frames are boosted.
pub(crate) fn alpha_matrix<T: Real>(p: &FourVector<T>, bath: &BathParams<T>) -> Result<Tensor2<T>> {
    let p2 = check_momentum(p)?;
    let w = bath.w;
    if w.0[1] == T::zero() && w.0[2] == T::zero() && w.0[3] == T::zero() {
        return Ok(alpha_bath_frame(p, p2, bath));
    }
    let lab = Boost::from_rest_of(&w)?;
    let local = lab.inverse().apply(p);
    Ok(lab.transform_tensor(&alpha_bath_frame(&local, p2, bath)).symmetrized())
}

/// `(2π_ε − (ε+π_ε)(w·p)²/p²) P − (ε+π_ε) ŵ ŵ`, well conditioned in the
/// rest frame of `p` where `P` is exact.
fn alpha_particle_frame<T: Real>(p: &FourVector<T>, bath: &BathParams<T>) -> Result<Tensor2<T>> {
    let p2 = check_momentum(p)?;
    let (eps, pi) = (bath.energy_density, bath.pressure);
    let wp = bath.w.dot(p);
    let w_hat = bath.w - p.scale(wp / p2);
    let proj = projector_unchecked(p, p2);
    let a = proj.scale(T::lit(2.0) * pi - (eps + pi) * wp * wp / p2) - w_hat.outer(&w_hat).scale(eps + pi);
    Ok(a.symmetrized())
}

fn alpha_bath_frame<T: Real>(p: &FourVector<T>, p2: T, bath: &BathParams<T>) -> Tensor2<T> {
    let (eps, pi) = (bath.energy_density, bath.pressure);
    let spread = eps - pi;
    let q = p.spatial();
    let qn = p.spatial_norm();
    let mut a = [[T::zero(); 4]; 4];
    if qn == T::zero() {
        for i in 1..4 {
            a[i][i] = spread;
        }
        return Tensor2::from_rows(a);
    }
    let m = p2.sqrt();
    let p0 = p.time();
    let n = q.map(|c| c / qn);
    let e = [qn / m, p0 * n[0] / m, p0 * n[1] / m, p0 * n[2] / m];
    let transverse = (eps + pi) * (p0 * p0 / p2) - T::lit(2.0) * pi;
    for mu in 0..4 {
        for nu in 0..4 {
            a[mu][nu] = spread * e[mu] * e[nu];
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            let d = if i == j { T::one() } else { T::zero() };
            a[i + 1][j + 1] += transverse * (d - n[i] * n[j]);
        }
    }
    Tensor2::from_rows(a)
}

/// Diffusion tensor at one phase point, with its construction invariants
/// already verified.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTensor<T> {
    alpha: Tensor2<T>,
    p: FourVector<T>,
    bath: BathParams<T>,
    min_eigenvalue: T,
}

impl<T: Real> DiffusionTensor<T> {
    pub fn tensor(&self) -> &Tensor2<T> {
        &self.alpha
    }

    pub fn momentum(&self) -> &FourVector<T> {
        &self.p
    }

    pub fn frame(&self) -> &FourVector<T> {
        &self.bath.w
    }

    pub fn bath(&self) -> &BathParams<T> {
        &self.bath
    }

    /// Smallest eigenvalue of the component matrix found during validation.
    pub fn min_eigenvalue(&self) -> T {
        self.min_eigenvalue
    }

    /// `α^{μν} a_ν`.
    pub fn contract(&self, a: &FourVector<T>) -> FourVector<T> {
        self.alpha.contract(&a.lower())
    }
}

/// Builds `α(p, w)` and checks symmetry, degeneracy along `p_ν` and
/// positive semidefiniteness.
pub fn alpha<T: Real>(p: &FourVector<T>, bath: &BathParams<T>) -> Result<DiffusionTensor<T>> {
    let a = alpha_matrix(p, bath)?;
    let scale = scale_with_floor(a.max_abs());

    let null = a.contract(&p.lower());
    let defect = null.max_abs() / (scale * scale_with_floor(p.max_abs()));
    if defect > T::tol(DEGENERACY_TOL) {
        return Err(Error::invariant("p_μ α^{μν} = 0", format!("relative defect {defect}")));
    }

    let eig = sym_eigen4(&a.m);
    let min_eigenvalue = eig.values[3];
    if min_eigenvalue < -T::tol(PSD_TOL) * scale {
        return Err(Error::invariant(
            "α positive semidefinite",
            format!("eigenvalue {min_eigenvalue} at scale {scale}"),
        ));
    }
    Ok(DiffusionTensor {
        alpha: a,
        p: *p,
        bath: *bath,
        min_eigenvalue,
    })
}

/// `a_μ a_ν α^{μν}` for a contravariant `a`.
pub fn quadratic_form<T: Real>(a: &FourVector<T>, p: &FourVector<T>, bath: &BathParams<T>) -> Result<T> {
    Ok(alpha_matrix(p, bath)?.quadratic(&a.lower()))
}

/// `ŵ = w − (p·w) p / p² = P^{μν} w_ν`.
pub fn transverse_frame<T: Real>(p: &FourVector<T>, w: &FourVector<T>) -> Result<FourVector<T>> {
    let p2 = check_momentum(p)?;
    Ok(*w - p.scale(p.dot(w) / p2))
}

/// `b^μ = s λ P^{μν} w_ν`, with `s` from the bath's friction sign.
pub fn friction_drift<T: Real>(p: &FourVector<T>, bath: &BathParams<T>) -> Result<FourVector<T>> {
    Ok(transverse_frame(p, &bath.w)?.scale(bath.signed_friction()))
}

/// Itô drift with its finite-difference diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoDrift<T> {
    /// Divergence plus friction.
    pub drift: FourVector<T>,
    /// `∂_ν α^{νμ}`, Richardson extrapolated.
    pub divergence: FourVector<T>,
    /// `max|D_h − D_{h/2}|` over components.
    pub error_estimate: T,
    /// Error estimate above `1e-6 · |drift|`.
    pub accuracy_warning: bool,
}

/// Default finite-difference step `1e-4 · max(1, √p²)`, applied in the
/// particle rest frame.
pub fn default_step<T: Real>(p: &FourVector<T>) -> T {
    T::lit(1e-4) * p.norm_sq().abs().sqrt().max(T::one())
}

fn divergence_central<T: Real>(p: &FourVector<T>, bath: &BathParams<T>, h: T) -> Result<FourVector<T>> {
    let mut d = FourVector::zero();
    let two_h = T::lit(2.0) * h;
    for mu in 0..4 {
        let mut hi = *p;
        let mut lo = *p;
        hi[mu] += h;
        lo[mu] -= h;
        let ah = alpha_particle_frame(&hi, bath)?;
        let al = alpha_particle_frame(&lo, bath)?;
        for nu in 0..4 {
            d[nu] += (ah.m[mu][nu] - al.m[mu][nu]) / two_h;
        }
    }
    Ok(d)
}

/// `∂_ν α^{νμ}(p)` by central differences at `h` and `h/2`, combined by
/// Richardson extrapolation, plus the friction drift.
///
/// The stencil is laid out in the rest frame of `p`, where `p² ` carries no
/// cancellation, and the result is boosted back; the divergence is a vector,
/// so this only changes rounding. `h` is measured in that frame.
pub fn ito_drift<T: Real>(p: &FourVector<T>, bath: &BathParams<T>, h: T) -> Result<ItoDrift<T>> {
    check_momentum(p)?;
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    // α is even in p and its divergence odd.
    let sign = if p[0] < T::zero() { -T::one() } else { T::one() };
    let forward = p.scale(sign);
    let to_lab = Boost::from_rest_of(&forward)?;
    let to_rest = to_lab.inverse();
    let p_rest = FourVector::at_rest(forward.norm_sq().sqrt());
    let mut bath_rest = *bath;
    bath_rest.w = to_rest.apply(&bath.w);

    let d_h = to_lab.apply(&divergence_central(&p_rest, &bath_rest, h)?).scale(sign);
    let d_half = to_lab
        .apply(&divergence_central(&p_rest, &bath_rest, h * T::lit(0.5))?)
        .scale(sign);
    let three = T::lit(3.0);
    let divergence = FourVector(std::array::from_fn(|i| (T::lit(4.0) * d_half[i] - d_h[i]) / three));
    let error_estimate = (d_h - d_half).max_abs();
    let drift = divergence + friction_drift(p, bath)?;
    let accuracy_warning = error_estimate > T::tol(DRIFT_ACCURACY) * scale_with_floor(drift.max_abs());
    if accuracy_warning {
        log::warn!(
            "finite-difference step {h} too coarse: error estimate {error_estimate} vs |drift| {}",
            drift.max_abs()
        );
    }
    Ok(ItoDrift {
        drift,
        divergence,
        error_estimate,
        accuracy_warning,
    })
}

/// `σ` with `σ σᵀ = 2α`, stored as up to three noise channels `σ^{μa}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseFactor<T> {
    /// Channel `a` is the column `σ^{·a}`; channels past `rank` are zero.
    pub channels: [FourVector<T>; 3],
    pub rank: usize,
    /// Number of eigenvalues of `2α` that were clamped to zero.
    pub clamped: usize,
    /// Most negative clamped eigenvalue (0 if none were negative).
    pub most_negative: T,
}

impl<T: Real> NoiseFactor<T> {
    /// `σ ξ` for three standard normals.
    pub fn apply(&self, xi: &[T; 3]) -> FourVector<T> {
        let mut out = FourVector::zero();
        for (c, x) in self.channels.iter().zip(xi) {
            out += c.scale(*x);
        }
        out
    }

    /// `σ σᵀ`.
    pub fn reconstruct(&self) -> Tensor2<T> {
        self.channels
            .iter()
            .fold(Tensor2::zeros(), |acc, c| acc + c.outer(c))
    }
}

/// Eigendecomposition of `2α`: channels are `√λ_a v_a` for the three largest
/// eigenvalues, projected orthogonal to `p_ν` so every channel is tangent to
/// the mass shell.
pub fn noise_factor<T: Real>(alpha: &DiffusionTensor<T>) -> Result<NoiseFactor<T>> {
    let two_alpha = alpha.alpha.scale(T::lit(2.0));
    let bath_scale = T::lit(2.0) * (alpha.bath.energy_density + alpha.bath.pressure);
    let scale = scale_with_floor(two_alpha.max_abs().max(bath_scale));
    let eig = sym_eigen4(&two_alpha.m);
    if eig.values[3] < -T::tol(INDEFINITE_TOL) * scale {
        return Err(Error::InvalidBath(format!(
            "diffusion tensor is indefinite: eigenvalue {} at scale {}",
            eig.values[3], scale
        )));
    }

    let pl = alpha.p.lower().0;
    let pn = pl.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    let p_hat = pl.map(|x| x / pn);

    let mut channels = [FourVector::zero(); 3];
    let mut rank = 0;
    let mut clamped = 0usize;
    let mut most_negative = T::zero();
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda <= T::tol(CLAMP_TOL) * scale {
            clamped += 1;
            most_negative = most_negative.min(lambda);
            continue;
        }
        if rank == 3 {
            break;
        }
        let v = eig.vectors[k];
        let along = (0..4).fold(T::zero(), |s, i| s + v[i] * p_hat[i]);
        let root = lambda.sqrt();
        channels[rank] = FourVector(std::array::from_fn(|i| (v[i] - along * p_hat[i]) * root));
        rank += 1;
    }
    // The fourth eigenvalue belongs to p_ν and is always clamped; report only
    // the extra ones.
    let clamped = clamped.saturating_sub(1);
    Ok(NoiseFactor {
        channels,
        rank,
        clamped,
        most_negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minkowski::boost_to_rest;
    use proptest::prelude::*;

    fn bath(eps: f64, pi: f64, w: FourVector<f64>) -> BathParams<f64> {
        BathParams::new(1.0, eps, pi, 1.0, w).unwrap()
    }

    fn rest() -> FourVector<f64> {
        FourVector::at_rest(1.0)
    }

    /// Closed form `2π P − (ε+π) p⁻² [(pw)² η − (pw)(w p + p w) + p² w w]`.
    fn alpha_direct(p: &FourVector<f64>, b: &BathParams<f64>) -> Tensor2<f64> {
        let p2 = p.norm_sq();
        let w = b.w;
        let pw = p.dot(&w);
        let proj = Tensor2::metric() - p.outer(p).scale(1.0 / p2);
        let bracket = Tensor2::metric().scale(pw * pw) - (w.outer(p) + p.outer(&w)).scale(pw)
            + w.outer(&w).scale(p2);
        proj.scale(2.0 * b.pressure) - bracket.scale((b.energy_density + b.pressure) / p2)
    }

    /// Divergence by hand: `[(ε − 5π) p + 2(ε + π)(w·p) w] / p²`.
    fn divergence_closed(p: &FourVector<f64>, b: &BathParams<f64>) -> FourVector<f64> {
        let (e, pi) = (b.energy_density, b.pressure);
        let p2 = p.norm_sq();
        (p.scale(e - 5.0 * pi) + b.w.scale(2.0 * (e + pi) * b.w.dot(p))).scale(1.0 / p2)
    }

    #[test]
    fn projector_at_rest() {
        let proj = projector(&FourVector::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(proj, Tensor2::diag([0.0, -1.0, -1.0, -1.0]));
        assert!(matches!(projector(&FourVector::new(1.0, 1.0, 0.0, 0.0)), Err(Error::OffShell(_))));
        assert!(projector(&FourVector::new(1.0, 2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn c_tensor_rest_frame() {
        let (eps, pi) = (3.0, 0.5);
        let b = bath(eps, pi, rest());
        let c = c_tensor(&FourVector::at_rest(1.7), &b).unwrap();
        let wl = FourVector(rest().lower().0);
        let expected = Tensor2::metric().scale(pi - eps) - wl.outer(&wl).scale(eps + pi);
        assert!(c.max_abs_diff(&expected) < 1e-14);
        let zero = c_tensor(&FourVector::new(2.0, 0.3, 0.1, 0.0), &bath(0.0, 0.0, rest())).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn alpha_rest_frame_closed_form() {
        let b = bath(2.5, 0.7, rest());
        let a = alpha(&FourVector::at_rest(1.3), &b).unwrap();
        let expected = Tensor2::diag([0.0, 1.8, 1.8, 1.8]);
        assert!(a.tensor().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn alpha_f32_rest_frame() {
        let b = BathParams::<f32>::new(1.0, 2.5, 0.5, 1.0, FourVector::at_rest(1.0)).unwrap();
        let a = alpha(&FourVector::<f32>::at_rest(1.0), &b).unwrap();
        assert!((a.tensor().m[1][1] - 2.0).abs() < 1e-5);
        assert!(a.tensor().m[0][0].abs() < 1e-5);
    }

    #[test]
    fn divergence_matches_hand_expansion_at_rest() {
        let b = bath(2.0, 0.4, rest());
        let p = FourVector::at_rest(1.5);
        let d = ito_drift(&p, &b, default_step(&p)).unwrap();
        // 3(ε − π)/m along time, nothing spatial.
        let expected = FourVector::new(3.0 * 1.6 / 1.5, 0.0, 0.0, 0.0);
        assert!((d.divergence - expected).max_abs() < 1e-9);
        assert!((d.divergence - divergence_closed(&p, &b)).max_abs() < 1e-9);
        assert!(!d.accuracy_warning);
    }

    #[test]
    fn richardson_estimate_is_second_order() {
        let w = FourVector::unit_with_rapidity([0.0, 1.0, 0.0], 0.8);
        let b = bath(2.0, 0.3, w);
        let p = FourVector::on_shell(1.0, [0.5, -0.2, 0.9]);
        let e1 = ito_drift(&p, &b, 1e-2).unwrap().error_estimate;
        let e2 = ito_drift(&p, &b, 5e-3).unwrap().error_estimate;
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn zero_bath_has_zero_drift() {
        let b = BathParams::new(1.0, 0.0, 0.0, 1.0, rest()).unwrap();
        let p = FourVector::on_shell(1.0, [0.4, 0.1, 0.0]);
        let d = ito_drift(&p, &b, default_step(&p)).unwrap();
        assert_eq!(d.drift.max_abs(), 0.0);
    }

    #[test]
    fn friction_decelerates_in_bath_frame() {
        let b = bath(2.0, 0.5, rest());
        let p = FourVector::on_shell(1.0, [0.3, -0.6, 1.1]);
        let f = friction_drift(&p, &b).unwrap();
        let p2 = p.norm_sq();
        for i in 1..4 {
            let expected = -b.friction * p[0] * p[i] / p2;
            assert!((f[i] - expected).abs() < 1e-14);
        }
        assert!(friction_drift(&FourVector::at_rest(1.0), &b).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn noise_factor_rest_frame() {
        let b = bath(3.0, 1.0, rest());
        let a = alpha(&FourVector::at_rest(1.0), &b).unwrap();
        let nf = noise_factor(&a).unwrap();
        assert_eq!(nf.rank, 3);
        let s = (2.0f64 * 2.0).sqrt();
        let mut norms: Vec<f64> = nf.channels.iter().map(|c| c.spatial_norm()).collect();
        norms.sort_by(f64::total_cmp);
        for n in norms {
            assert!((n - s).abs() < 1e-12);
        }
        for c in nf.channels {
            assert_eq!(c[0].abs(), 0.0);
        }
    }

    #[test]
    fn indefinite_input_rejected() {
        // π_ε > ε bypassing validation.
        let mut b = bath(1.0, 0.5, rest());
        b.pressure = 2.0;
        assert!(matches!(
            alpha(&FourVector::at_rest(1.0), &b),
            Err(Error::Invariant { .. })
        ));
    }

    #[test]
    fn comoving_equal_scalars_drop_rank() {
        // ε = π_ε and p ∥ w: α w_ν = 0 as well as α p_ν = 0.
        let w = FourVector::unit_with_rapidity([1.0, 0.0, 0.0], 0.4);
        let b = bath(1.0, 1.0, w);
        let a = alpha(&w.scale(2.0), &b).unwrap();
        assert!(a.tensor().max_abs() < 1e-12);
        assert_eq!(noise_factor(&a).unwrap().rank, 0);
        let p = FourVector::on_shell(1.0, [0.0, 0.7, 0.0]);
        let a = alpha(&p, &b).unwrap();
        assert!(a.contract(&w).max_abs() < 1e-12 * a.tensor().max_abs());
        assert_eq!(noise_factor(&a).unwrap().rank, 2);
    }

    fn timelike(m: f64, s: [f64; 3]) -> FourVector<f64> {
        FourVector::on_shell(m, s)
    }

    prop_compose! {
        fn arb_unit()(ct in -1.0f64..1.0, phi in 0.0f64..6.283, eta in 0.0f64..3.0) -> FourVector<f64> {
            let st = (1.0 - ct * ct).sqrt();
            FourVector::unit_with_rapidity([st * phi.cos(), st * phi.sin(), ct], eta)
        }
    }
    prop_compose! {
        fn arb_momentum()(m2 in 0.1f64..100.0, s in proptest::array::uniform3(-5.0f64..5.0)) -> FourVector<f64> {
            timelike(m2.sqrt(), s)
        }
    }
    prop_compose! {
        fn arb_bath()(w in arb_unit(), pi in 0.0f64..5.0, extra in 0.0f64..5.0) -> BathParams<f64> {
            bath(pi + extra, pi, w)
        }
    }

    proptest! {
        #[test]
        fn alpha_equals_direct_form_and_pcp(p in arb_momentum(), b in arb_bath()) {
            let a = alpha(&p, &b).unwrap();
            let d = alpha_direct(&p, &b);
            let scale = d.max_abs().max(1e-14);
            prop_assert!(a.tensor().max_abs_diff(&d) <= 1e-10 * scale);
            let proj = projector(&p).unwrap();
            let pcp = proj.matmul(&c_tensor(&p, &b).unwrap()).matmul(&proj);
            prop_assert!(a.tensor().max_abs_diff(&pcp) <= 1e-10 * scale);
        }

        #[test]
        fn contraction_identity(p in arb_momentum(), b in arb_bath()) {
            let a = alpha(&p, &b).unwrap();
            let lhs = a.contract(&b.w);
            let rhs = transverse_frame(&p, &b.w).unwrap().scale(b.pressure - b.energy_density);
            let scale = a.tensor().max_abs() * b.w.max_abs();
            prop_assert!((lhs - rhs).max_abs() <= 1e-10 * scale.max(1e-14));
        }

        #[test]
        fn alpha_covariance(p in arb_momentum(), b in arb_bath(), ax in arb_unit()) {
            let boost = Boost::from_rest_of(&ax).unwrap();
            let a = alpha(&p, &b).unwrap();
            let bb = b.with_frame(boost.apply(&b.w)).unwrap();
            let ab = alpha(&boost.apply(&p), &bb).unwrap();
            let expected = boost.transform_tensor(a.tensor());
            prop_assert!(ab.tensor().max_abs_diff(&expected) <= 1e-10 * expected.max_abs().max(1e-14));
        }

        #[test]
        fn divergence_matches_closed_form(p in arb_momentum(), b in arb_bath()) {
            let d = ito_drift(&p, &b, default_step(&p)).unwrap();
            let c = divergence_closed(&p, &b);
            prop_assert!((d.divergence - c).max_abs() <= 1e-7 * c.max_abs().max(1e-10));
            // Itô correction keeps p² fixed: 2 p·D + 2 tr(αη) = 0.
            let a = alpha(&p, &b).unwrap();
            let tr = a.tensor().metric_trace();
            prop_assert!((p.dot(&d.divergence) + tr).abs() <= 1e-7 * (p.max_abs() * c.max_abs()).max(1e-10));
        }

        #[test]
        fn friction_tangent_and_drift_covariant(p in arb_momentum(), b in arb_bath(), ax in arb_unit()) {
            let f = friction_drift(&p, &b).unwrap();
            prop_assert!(p.dot(&f).abs() <= 1e-10 * f.max_abs().max(1e-14) * p.max_abs());
            let boost = Boost::from_rest_of(&ax).unwrap();
            let bb = b.with_frame(boost.apply(&b.w)).unwrap();
            let pb = boost.apply(&p);
            let fb = friction_drift(&pb, &bb).unwrap();
            let expected = boost.apply(&f);
            prop_assert!((fb - expected).max_abs() <= 1e-10 * expected.max_abs().max(1e-12));
            let h = default_step(&p);
            let d = ito_drift(&p, &b, h).unwrap();
            let db = ito_drift(&pb, &bb, default_step(&pb)).unwrap();
            let expected = boost.apply(&d.drift);
            let rel = (db.drift - expected).max_abs() / expected.max_abs().max(1e-12);
            prop_assert!(rel <= 1e-8, "rel {rel:e} err {:e} {:e}", d.error_estimate, db.error_estimate);
        }

        #[test]
        fn noise_reconstructs_two_alpha(p in arb_momentum(), b in arb_bath()) {
            let a = alpha(&p, &b).unwrap();
            let nf = noise_factor(&a).unwrap();
            let two = a.tensor().scale(2.0);
            let scale = two.max_abs().max(1e-14);
            prop_assert!(nf.reconstruct().max_abs_diff(&two) <= 1e-10 * scale);
            let pl = p.lower();
            for c in nf.channels {
                prop_assert!(pl.contract(&c).abs() <= 1e-10 * scale.sqrt() * p.max_abs());
            }
        }

        #[test]
        fn frame_formulas(p in arb_momentum(), b in arb_bath(), a in arb_momentum(), s in proptest::array::uniform4(-3.0f64..3.0)) {
            let (eps, pi) = (b.energy_density, b.pressure);
            // Timelike a: evaluate in the rest frame of a.
            let to_a = boost_to_rest(&a).unwrap();
            let (pa, wa, aa) = (to_a.apply(&p), to_a.apply(&b.w), to_a.apply(&a));
            let val = quadratic_form(&a, &p, &b).unwrap();
            let pv = pa.spatial();
            let wv = wa.spatial();
            let p_sq = pv.iter().map(|x| x * x).sum::<f64>();
            let w_sq = wv.iter().map(|x| x * x).sum::<f64>();
            let pw = (0..3).map(|i| pv[i] * wv[i]).sum::<f64>();
            let formula = aa[0] * aa[0] / p.norm_sq() * ((eps - pi) * p_sq + (eps + pi) * (p_sq * w_sq - pw * pw));
            let scale = alpha(&p, &b).unwrap().tensor().max_abs() * a.max_abs().powi(2);
            prop_assert!((val - formula).abs() <= 1e-10 * scale.max(formula.abs()).max(1e-14));
            prop_assert!(val >= -1e-10 * scale);

            // General a (any causal type): evaluate in the bath rest frame.
            let av = FourVector(s);
            let to_w = boost_to_rest(&b.w).unwrap();
            let (pw4, aw4) = (to_w.apply(&p), to_w.apply(&av));
            let (p0, a0) = (pw4[0], aw4[0]);
            let pv = pw4.spatial();
            let avv = aw4.spatial();
            let p_sq = pv.iter().map(|x| x * x).sum::<f64>();
            let a_sq = avv.iter().map(|x| x * x).sum::<f64>();
            let pa_dot = (0..3).map(|i| pv[i] * avv[i]).sum::<f64>();
            let p2 = p.norm_sq();
            let formula = (eps - pi) / p2 * (a0 * a0 * p_sq + p0 * p0 * a_sq - 2.0 * pa_dot * p0 * a0)
                + 2.0 * pi / p2 * (p_sq * a_sq - pa_dot * pa_dot);
            let val = quadratic_form(&av, &p, &b).unwrap();
            let scale = alpha(&p, &b).unwrap().tensor().max_abs() * av.max_abs().powi(2);
            prop_assert!((val - formula).abs() <= 1e-10 * scale.max(formula.abs()).max(1e-14));
            prop_assert!(val >= -1e-10 * scale.max(1e-14));
            let along_p = quadratic_form(&p.scale(0.7), &p, &b).unwrap();
            prop_assert!(along_p.abs() <= 1e-10 * scale.max(1e-14) * p.max_abs().powi(2));
        }
    }
}
