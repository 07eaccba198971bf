//! Small dense linear algebra used by PCA.

use crate::error::{Error, Result};
use crate::Scalar;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues, descending.
    pub values: Vec<T>,
    /// Row `k` (length n) is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<T>>,
}

/// Cyclic Jacobi rotations on a row-major symmetric `n x n` matrix.
///
/// Converges quadratically once off-diagonal mass is small; the sweep cap is
/// far above what well-conditioned inputs of a few hundred columns need.
pub fn symmetric_eigen<T: Scalar>(a: &[T], n: usize) -> Result<SymmetricEigen<T>> {
    if a.len() != n * n {
        return Err(Error::Dimension {
            expected: n * n,
            found: a.len(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in symmetric matrix".into()));
    }
    let mut m = a.to_vec();
    // symmetrize against round-off in the caller
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (m[i * n + j] + m[j * n + i]) * T::of(0.5);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }

    let scale = m.iter().map(|x| x.abs()).fold(T::zero(), T::max);
    let tol = T::epsilon() * T::epsilon() * scale * scale;
    const MAX_SWEEPS: usize = 100;
    let mut converged = n < 2 || scale == T::zero();
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let off: T = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // descending eigenvalue; index breaks ties so the order is total
    order.sort_by(|&a, &b| {
        m[b * n + b]
            .partial_cmp(&m[a * n + a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let e = symmetric_eigen(&[1.0, 0.0, 0.0, 4.0], 2).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vectors[0].iter().map(|x: &f64| x.abs()).collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_by_hand() {
        // [[2,1],[1,2]] has eigenpairs 3:(1,1)/sqrt2 and 1:(1,-1)/sqrt2
        let e = symmetric_eigen::<f64>(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[0][0].abs() - h).abs() < 1e-12);
        assert!((e.vectors[0][0] - e.vectors[0][1]).abs() < 1e-12);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let e = symmetric_eigen(&a, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                assert!((r - a[i * n + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(symmetric_eigen(&[1.0f64, 2.0, 3.0], 2).is_err());
        assert!(symmetric_eigen(&[f64::NAN], 1).is_err());
    }
}
