//! Four-vectors, rank-2 tensors and Lorentz boosts in Minkowski space.
//!
//! Metric signature is (+,−,−,−) and index 0 is time. Every stored
//! [`FourVector`] and [`Tensor2`] is contravariant unless a function says
//! otherwise; covariant components only appear through [`Covector`] or the
//! explicit `lower_*` helpers.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Diagonal of the metric η.
#[inline]
pub fn metric_diag<T: Real>(mu: usize) -> T {
    if mu == 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// Absolute floor used when converting relative tolerances to absolute ones.
pub const ABS_FLOOR: f64 = 1e-14;

/// `max(scale, 1e-14)`, the reference magnitude for relative comparisons.
#[inline]
pub fn scale_with_floor<T: Real>(scale: T) -> T {
    scale.abs().max(T::lit(ABS_FLOOR))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FourVector<T>(pub [T; 4]);

/// Covariant components `v_μ = η_μν v^ν`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Covector<T>(pub [T; 4]);

/// Minkowski inner product `a⁰b⁰ − a·b`.
#[inline]
pub fn dot<T: Real>(a: &FourVector<T>, b: &FourVector<T>) -> T {
    a.0[0] * b.0[0] - a.0[1] * b.0[1] - a.0[2] * b.0[2] - a.0[3] * b.0[3]
}

impl<T: Real> FourVector<T> {
    pub fn new(t: T, x: T, y: T, z: T) -> Self {
        FourVector([t, x, y, z])
    }

    pub fn zero() -> Self {
        FourVector([T::zero(); 4])
    }

    /// `(m, 0, 0, 0)`.
    pub fn at_rest(m: T) -> Self {
        FourVector([m, T::zero(), T::zero(), T::zero()])
    }

    /// On-shell momentum `(√(m² + |p|²), p)`.
    pub fn on_shell(m: T, spatial: [T; 3]) -> Self {
        let e = (m * m + spatial[0] * spatial[0] + spatial[1] * spatial[1] + spatial[2] * spatial[2])
            .sqrt();
        FourVector([e, spatial[0], spatial[1], spatial[2]])
    }

    /// Unit timelike four-velocity with the given rapidity along a unit axis.
    pub fn unit_with_rapidity(axis: [T; 3], rapidity: T) -> Self {
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        FourVector([ch, sh * axis[0], sh * axis[1], sh * axis[2]])
    }

    #[inline]
    pub fn time(&self) -> T {
        self.0[0]
    }

    #[inline]
    pub fn spatial(&self) -> [T; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn spatial_norm(&self) -> T {
        let s = self.spatial();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        dot(self, other)
    }

    #[inline]
    pub fn norm_sq(&self) -> T {
        dot(self, self)
    }

    pub fn is_timelike(&self) -> bool {
        self.norm_sq() > T::zero()
    }

    #[inline]
    pub fn lower(&self) -> Covector<T> {
        let v = &self.0;
        Covector([v[0], -v[1], -v[2], -v[3]])
    }

    pub fn scale(&self, s: T) -> Self {
        FourVector([self.0[0] * s, self.0[1] * s, self.0[2] * s, self.0[3] * s])
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Outer product `a^μ b^ν`.
    pub fn outer(&self, other: &Self) -> Tensor2<T> {
        let mut m = [[T::zero(); 4]; 4];
        for (mu, row) in m.iter_mut().enumerate() {
            for (nu, x) in row.iter_mut().enumerate() {
                *x = self.0[mu] * other.0[nu];
            }
        }
        Tensor2 { m }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FourVector(self.0.map(f))
    }

    pub fn cast<U: Real>(&self) -> FourVector<U> {
        FourVector(self.0.map(|x| U::lit(x.to_f64_lossy())))
    }
}

impl<T: Real> Covector<T> {
    #[inline]
    pub fn raise(&self) -> FourVector<T> {
        let v = &self.0;
        FourVector([v[0], -v[1], -v[2], -v[3]])
    }

    /// `a_μ v^μ`.
    #[inline]
    pub fn contract(&self, v: &FourVector<T>) -> T {
        self.0[0] * v.0[0] + self.0[1] * v.0[1] + self.0[2] * v.0[2] + self.0[3] * v.0[3]
    }
}

impl<T> Index<usize> for FourVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for FourVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Real> Add for FourVector<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        FourVector(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl<T: Real> AddAssign for FourVector<T> {
    fn add_assign(&mut self, o: Self) {
        for i in 0..4 {
            self.0[i] += o.0[i];
        }
    }
}

impl<T: Real> Sub for FourVector<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        FourVector(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl<T: Real> Neg for FourVector<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|x| -x)
    }
}

impl<T: Real> Mul<T> for FourVector<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Rank-2 tensor stored as a raw 4×4 array of components.
///
/// Index positions are a matter of convention at each call site; the
/// type itself is plain storage plus the metric-aware helpers below.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2<T> {
    pub m: [[T; 4]; 4],
}

impl<T: Real> Default for Tensor2<T> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Real> Tensor2<T> {
    pub fn zeros() -> Self {
        Tensor2 {
            m: [[T::zero(); 4]; 4],
        }
    }

    pub fn from_rows(m: [[T; 4]; 4]) -> Self {
        Tensor2 { m }
    }

    pub fn diag(d: [T; 4]) -> Self {
        let mut t = Self::zeros();
        for i in 0..4 {
            t.m[i][i] = d[i];
        }
        t
    }

    /// η^{μν}; numerically identical to η_{μν}.
    pub fn metric() -> Self {
        Self::diag([T::one(), -T::one(), -T::one(), -T::one()])
    }

    /// Construct and check symmetry to a relative tolerance.
    pub fn symmetric(m: [[T; 4]; 4], rel_tol: T) -> Result<Self> {
        let t = Tensor2 { m };
        let defect = t.max_abs_diff(&t.transpose());
        if defect > rel_tol * scale_with_floor(t.max_abs()) {
            return Err(Error::invariant(
                "symmetric",
                format!("max |t - tᵀ| = {defect}"),
            ));
        }
        Ok(t)
    }

    /// Construct and check antisymmetry to a relative tolerance.
    pub fn antisymmetric(m: [[T; 4]; 4], rel_tol: T) -> Result<Self> {
        let t = Tensor2 { m };
        let defect = (t + t.transpose()).max_abs();
        if defect > rel_tol * scale_with_floor(t.max_abs()) {
            return Err(Error::invariant(
                "antisymmetric",
                format!("max |t + tᵀ| = {defect}"),
            ));
        }
        Ok(t)
    }

    pub fn transpose(&self) -> Self {
        Tensor2 {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[j][i])),
        }
    }

    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Tensor2 {
            m: std::array::from_fn(|i| std::array::from_fn(|j| (self.m[i][j] + self.m[j][i]) * half)),
        }
    }

    /// Lowers (or raises) both indices: `η t η`.
    pub fn lower_both(&self) -> Self {
        Tensor2 {
            m: std::array::from_fn(|i| {
                std::array::from_fn(|j| self.m[i][j] * metric_diag::<T>(i) * metric_diag::<T>(j))
            }),
        }
    }

    pub fn raise_both(&self) -> Self {
        self.lower_both()
    }

    /// Raw matrix product of the component arrays.
    pub fn matmul(&self, o: &Self) -> Self {
        let mut r = Self::zeros();
        for i in 0..4 {
            for k in 0..4 {
                let a = self.m[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..4 {
                    r.m[i][j] += a * o.m[k][j];
                }
            }
        }
        r
    }

    /// Raw matrix-vector product `Σ_ν t[μ][ν] v[ν]` on component arrays.
    #[inline]
    pub fn apply_raw(&self, v: &[T; 4]) -> [T; 4] {
        std::array::from_fn(|i| {
            self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2] + self.m[i][3] * v[3]
        })
    }

    /// `t^{μν} a_ν` for a contravariant tensor and a covector.
    #[inline]
    pub fn contract(&self, a: &Covector<T>) -> FourVector<T> {
        FourVector(self.apply_raw(&a.0))
    }

    /// `a_μ a_ν t^{μν}`.
    pub fn quadratic(&self, a: &Covector<T>) -> T {
        let ta = self.apply_raw(&a.0);
        (0..4).fold(T::zero(), |s, i| s + a.0[i] * ta[i])
    }

    pub fn scale(&self, s: T) -> Self {
        Tensor2 {
            m: self.m.map(|row| row.map(|x| x * s)),
        }
    }

    pub fn max_abs(&self) -> T {
        self.m
            .iter()
            .flat_map(|r| r.iter())
            .fold(T::zero(), |a, x| a.max(x.abs()))
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (*self - *o).max_abs()
    }

    /// Trace with one index lowered, `t^{μν} η_{μν}`.
    pub fn metric_trace(&self) -> T {
        (0..4).fold(T::zero(), |s, i| s + self.m[i][i] * metric_diag::<T>(i))
    }

    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        self.max_abs_diff(&self.transpose()) <= rel_tol * scale_with_floor(self.max_abs())
    }

    pub fn cast<U: Real>(&self) -> Tensor2<U> {
        Tensor2 {
            m: self.m.map(|r| r.map(|x| U::lit(x.to_f64_lossy()))),
        }
    }
}

impl<T: Real> Add for Tensor2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Tensor2 {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[i][j] + o.m[i][j])),
        }
    }
}

impl<T: Real> Sub for Tensor2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Tensor2 {
            m: std::array::from_fn(|i| std::array::from_fn(|j| self.m[i][j] - o.m[i][j])),
        }
    }
}

/// Lorentz transformation `Λ^μ_ν`, acting on contravariant vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boost<T> {
    m: [[T; 4]; 4],
}

impl<T: Real> Boost<T> {
    pub fn identity() -> Self {
        Boost {
            m: Tensor2::diag([T::one(); 4]).m,
        }
    }

    /// Pure boost by rapidity `rapidity` along the unit `axis`; maps
    /// `(1,0,0,0)` to `(cosh η, sinh η · axis)`.
    pub fn along(axis: [T; 3], rapidity: T) -> Self {
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        let mut m = [[T::zero(); 4]; 4];
        m[0][0] = ch;
        for i in 0..3 {
            m[0][i + 1] = sh * axis[i];
            m[i + 1][0] = sh * axis[i];
            for j in 0..3 {
                let d = if i == j { T::one() } else { T::zero() };
                m[i + 1][j + 1] = d + (ch - T::one()) * axis[i] * axis[j];
            }
        }
        Boost { m }
    }

    /// Pure boost from the rest frame of `u` (unit future timelike) to the lab:
    /// maps `(1,0,0,0)` to `u`.
    fn from_unit_velocity(u: &FourVector<T>) -> Self {
        let g = u.0[0];
        let mut m = [[T::zero(); 4]; 4];
        m[0][0] = g;
        for i in 0..3 {
            m[0][i + 1] = u.0[i + 1];
            m[i + 1][0] = u.0[i + 1];
            for j in 0..3 {
                let d = if i == j { T::one() } else { T::zero() };
                m[i + 1][j + 1] = d + u.0[i + 1] * u.0[j + 1] / (T::one() + g);
            }
        }
        Boost { m }
    }

    /// Lab boost carrying the rest frame of `w` to its actual motion.
    pub fn from_rest_of(w: &FourVector<T>) -> Result<Self> {
        let u = unit_future(w)?;
        Ok(Self::from_unit_velocity(&u))
    }

    /// Accepts an arbitrary matrix after checking that it preserves η.
    pub fn from_matrix(m: [[T; 4]; 4], rel_tol: T) -> Result<Self> {
        let b = Boost { m };
        let defect = b.lorentz_defect();
        if defect > rel_tol {
            return Err(Error::invariant("ΛᵀηΛ = η", format!("defect {defect}")));
        }
        if b.m[0][0] < T::one() - rel_tol || b.det() < T::zero() {
            return Err(Error::invariant(
                "proper orthochronous",
                format!("Λ⁰₀ = {}, det = {}", b.m[0][0], b.det()),
            ));
        }
        Ok(b)
    }

    pub fn matrix(&self) -> &[[T; 4]; 4] {
        &self.m
    }

    pub fn apply(&self, v: &FourVector<T>) -> FourVector<T> {
        FourVector(Tensor2 { m: self.m }.apply_raw(&v.0))
    }

    /// Covectors transform with `(Λ⁻¹)ᵀ`.
    pub fn apply_covector(&self, a: &Covector<T>) -> Covector<T> {
        self.apply(&a.raise()).lower()
    }

    /// `Λ t Λᵀ` for a contravariant rank-2 tensor.
    pub fn transform_tensor(&self, t: &Tensor2<T>) -> Tensor2<T> {
        let l = Tensor2 { m: self.m };
        l.matmul(t).matmul(&l.transpose())
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Boost {
            m: Tensor2 { m: self.m }.matmul(&Tensor2 { m: other.m }).m,
        }
    }

    /// `Λ⁻¹ = η Λᵀ η`.
    pub fn inverse(&self) -> Self {
        Boost {
            m: Tensor2 { m: self.m }.transpose().lower_both().m,
        }
    }

    /// `max |ΛᵀηΛ − η|` over entries.
    pub fn lorentz_defect(&self) -> T {
        let l = Tensor2 { m: self.m };
        let eta = Tensor2::<T>::metric();
        l.transpose().matmul(&eta).matmul(&l).max_abs_diff(&eta)
    }

    pub fn det(&self) -> T {
        det4(&self.m)
    }

    pub fn is_proper_orthochronous(&self) -> bool {
        self.det() > T::zero() && self.m[0][0] >= T::one() - T::tol(1e-12)
    }
}

/// Boost taking `w` to `(√(w·w), 0, 0, 0)`.
///
/// Rejects vectors that are not future-directed timelike.
pub fn boost_to_rest<T: Real>(w: &FourVector<T>) -> Result<Boost<T>> {
    Ok(Boost::from_rest_of(w)?.inverse())
}

/// `Λ t Λᵀ`.
pub fn transform_tensor<T: Real>(boost: &Boost<T>, t: &Tensor2<T>) -> Tensor2<T> {
    boost.transform_tensor(t)
}

/// Normalizes a future-directed timelike vector to unit norm.
pub fn unit_future<T: Real>(w: &FourVector<T>) -> Result<FourVector<T>> {
    let n2 = w.norm_sq();
    if !(n2 > T::zero()) || w.0[0] <= T::zero() {
        return Err(Error::Frame(format!(
            "expected future-directed timelike vector, got {:?} with w·w = {}",
            w.0.map(|x| x.to_f64_lossy()),
            n2
        )));
    }
    Ok(w.scale(T::one() / n2.sqrt()))
}

fn det3<T: Real>(a: [[T; 3]; 3]) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub(crate) fn det4<T: Real>(m: &[[T; 4]; 4]) -> T {
    let mut det = T::zero();
    for c in 0..4 {
        let minor: [[T; 3]; 3] = std::array::from_fn(|i| {
            let row = &m[i + 1];
            let mut r = [T::zero(); 3];
            let mut k = 0;
            for (j, x) in row.iter().enumerate() {
                if j != c {
                    r[k] = *x;
                    k += 1;
                }
            }
            r
        });
        let sign = if c % 2 == 0 { T::one() } else { -T::one() };
        det += sign * m[0][c] * det3(minor);
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dot_examples() {
        let t = FourVector::new(1.0, 0.0, 0.0, 0.0);
        let l = FourVector::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(dot(&t, &t), 1.0);
        assert_eq!(dot(&l, &l), 0.0);
        assert_eq!(dot(&FourVector::new(2.0, 1.0, 0.0, 0.0), &FourVector::new(0.0, 0.0, 3.0, 0.0)), 0.0);
    }

    #[test]
    fn lower_raise_identity() {
        let v = FourVector::new(1.5, -2.0, 0.25, 3.0);
        assert_eq!(v.lower().raise(), v);
        assert_eq!(v.lower().contract(&v), v.norm_sq());
    }

    #[test]
    fn rest_boost_of_rest_is_identity() {
        let b = boost_to_rest(&FourVector::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(b, Boost::identity());
    }

    #[test]
    fn rest_boost_of_rapidity_vector() {
        let eta = 0.7_f64;
        let w = FourVector::new(eta.cosh(), eta.sinh(), 0.0, 0.0);
        let b = boost_to_rest(&w).unwrap();
        let r = b.apply(&w);
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-14);
        for i in 1..4 {
            assert_abs_diff_eq!(r[i], 0.0, epsilon = 1e-14);
        }
        let expected = Boost::along([1.0, 0.0, 0.0], -eta);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(b.matrix()[i][j], expected.matrix()[i][j], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn non_timelike_frame_rejected() {
        assert!(matches!(
            boost_to_rest(&FourVector::new(1.0, 2.0, 0.0, 0.0)),
            Err(Error::Frame(_))
        ));
        assert!(boost_to_rest(&FourVector::new(1.0, 1.0, 0.0, 0.0)).is_err());
        assert!(boost_to_rest(&FourVector::new(-1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn metric_is_invariant_and_outer_product_transforms() {
        let b = Boost::along([0.6, 0.0, 0.8], 1.3);
        let eta = Tensor2::<f64>::metric();
        // Λ η Λᵀ = η for contravariant η^{μν}.
        assert!(b.transform_tensor(&eta).max_abs_diff(&eta) < 1e-12 * 10.0);
        let w = FourVector::new(2.0, 0.3, -1.0, 0.5);
        let lhs = b.transform_tensor(&w.outer(&w));
        let bw = b.apply(&w);
        assert!(lhs.max_abs_diff(&bw.outer(&bw)) < 1e-12 * lhs.max_abs());
        assert_eq!(Boost::identity().transform_tensor(&lhs), lhs);
    }

    #[test]
    fn determinant_and_orientation() {
        let b = Boost::along([0.0, 1.0, 0.0], -2.0);
        assert_abs_diff_eq!(b.det(), 1.0, epsilon = 1e-10);
        assert!(b.is_proper_orthochronous());
        let parity = [[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!(Boost::from_matrix(parity, 1e-12).is_err());
    }

    #[test]
    fn checked_symmetry_flags() {
        let mut m = [[0.0; 4]; 4];
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        assert!(Tensor2::symmetric(m, 1e-12).is_ok());
        assert!(Tensor2::antisymmetric(m, 1e-12).is_err());
        m[1][0] = -1.0;
        assert!(Tensor2::antisymmetric(m, 1e-12).is_ok());
        assert!(Tensor2::symmetric(m, 1e-12).is_err());
    }

    #[test]
    fn single_precision_boost() {
        let w = FourVector::<f32>::unit_with_rapidity([0.0, 0.0, 1.0], 0.5);
        let b = boost_to_rest(&w).unwrap();
        let r = b.apply(&w);
        assert!((r[0] - 1.0).abs() < 1e-5);
        assert!(r[3].abs() < 1e-5);
    }
}
