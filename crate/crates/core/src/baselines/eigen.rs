//! Cyclic Jacobi eigensolver for symmetric matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;
const REL_TOL: f64 = 1e-12;

/// Eigenvalues (ascending) and the matching orthonormal eigenvectors as
/// columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Rotates until the off-diagonal Frobenius norm is at most `1e-12 ‖A‖_F`.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::arg("eigensolver needs a non-empty square matrix"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let mut a = (matrix + matrix.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = REL_TOL * a.norm();
    let mut sweeps = 0;
    while off_diagonal_norm(&a) > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen { values, vectors, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn diagonal_input() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        let e = symmetric_eigen(&m).unwrap();
        assert_eq!(e.values, vec![1.0, 4.0]);
        assert_eq!(e.sweeps, 0);
        assert_eq!(e.vectors[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn random_spd_residuals_and_orthogonality() {
        for (n, seed) in [(2, 1), (5, 2), (8, 3), (32, 4), (64, 5)] {
            let m = random_spd(n, seed);
            let e = symmetric_eigen(&m).unwrap();
            let vtv = e.vectors.transpose() * &e.vectors;
            assert!((vtv - DMatrix::identity(n, n)).amax() <= 1e-8);
            for (k, lambda) in e.values.iter().enumerate() {
                let col = e.vectors.column(k);
                let r = &m * col - col * *lambda;
                assert!(r.norm() <= 1e-8 * m.norm(), "n={n} k={k}");
            }
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(symmetric_eigen(&DMatrix::zeros(2, 3)).is_err());
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(symmetric_eigen(&m), Err(Error::Numerical(_))));
    }
}
