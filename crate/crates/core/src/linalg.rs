//! Small dense kernels: symmetric 4×4 eigensolver.

use crate::scalar::Real;

/// Eigenpairs of a real symmetric 4×4 matrix, eigenvalues sorted descending.
/// `vectors[k]` is the unit eigenvector for `values[k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymEigen4<T> {
    pub values: [T; 4],
    pub vectors: [[T; 4]; 4],
}

/// Cyclic Jacobi rotations. Only the upper triangle of `a` is read.
pub fn sym_eigen4<T: Real>(a: &[[T; 4]; 4]) -> SymEigen4<T> {
    let mut m: [[T; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| if i <= j { a[i][j] } else { a[j][i] }));
    let mut v = [[T::zero(); 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }

    let frob = m.iter().flatten().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    if frob == T::zero() {
        return SymEigen4 {
            values: [T::zero(); 4],
            vectors: v,
        };
    }

    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..4 {
            for j in (i + 1)..4 {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() <= T::epsilon() * T::lit(0.01) * frob {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                let apq = m[p][q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..4 {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap_or(std::cmp::Ordering::Equal));
    SymEigen4 {
        values: order.map(|k| m[k][k]),
        vectors: order.map(|k| std::array::from_fn(|r| v[r][k])),
    }
}
