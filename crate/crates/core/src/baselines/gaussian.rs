//! Mean-pooled Gaussian fits: Mahalanobis, relative Mahalanobis and the
//! directional decomposition of the Mahalanobis distance.

use nalgebra::{DMatrix, DVector};

use super::eigen::symmetric_eigen;
use crate::error::{check_dim, Error, Result};
use crate::model::{ApoodModel, ApoodParams};
use crate::pooling::{Attention, QueryBlock};

pub const RIDGE_FACTOR: f64 = 1e-6;

/// `N(μ, Σ)` with the lower Cholesky factor of `Σ + ridge·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    ridge: f64,
    chol: DMatrix<f64>,
}

/// `1e-6 · tr(Σ)/D`, falling back to `1e-6` when `Σ` is zero.
pub fn ridge_for(cov: &DMatrix<f64>) -> f64 {
    let avg = cov.trace() / cov.nrows() as f64;
    if avg > 0.0 {
        RIDGE_FACTOR * avg
    } else {
        RIDGE_FACTOR
    }
}

impl GaussianFit {
    /// Builds a fit from moments with the default ridge.
    pub fn from_moments(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let ridge = if cov.nrows() > 0 { ridge_for(&cov) } else { 0.0 };
        Self::with_ridge(mean, cov, ridge)
    }

    pub fn with_ridge(mean: Vec<f64>, cov: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::arg("a Gaussian fit needs at least one dimension"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::arg(format!(
                "covariance is {}×{}, mean has {d} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) || !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::arg("fit has non-finite entries"));
        }
        let regularized = &cov + DMatrix::identity(d, d) * ridge;
        let chol = regularized
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularised covariance is not positive definite".into()))?
            .l();
        Ok(GaussianFit {
            mean: DVector::from_vec(mean),
            cov,
            ridge,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Unregularised sample covariance.
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn regularized_cov(&self) -> DMatrix<f64> {
        &self.cov + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }

    /// `(z̄ − μ)ᵀ (Σ + ridge·I)⁻¹ (z̄ − μ)` by one triangular solve.
    pub fn distance_sq(&self, zbar: &[f64]) -> Result<f64> {
        check_dim(self.dim(), zbar.len())?;
        let delta = DVector::from_column_slice(zbar) - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&delta)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(y.norm_squared())
    }
}

/// Sample mean and covariance (denominator `N`) of per-sequence means.
pub fn maha_fit(means: &[Vec<f64>]) -> Result<GaussianFit> {
    if means.len() < 2 {
        return Err(Error::arg("a Gaussian fit needs at least 2 vectors"));
    }
    let d = means[0].len();
    for m in means {
        check_dim(d, m.len())?;
    }
    let n = means.len() as f64;
    let mut mean = vec![0.0; d];
    for m in means {
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for m in means {
        let delta = DVector::from_iterator(d, m.iter().zip(&mean).map(|(a, b)| a - b));
        cov.syger(1.0 / n, &delta, &delta, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    GaussianFit::from_moments(mean, cov)
}

/// `−d²_Maha(z̄)`.
pub fn maha_score(zbar: &[f64], fit: &GaussianFit) -> Result<f64> {
    Ok(-fit.distance_sq(zbar)?)
}

/// `−(d²_ID − d²_BG)`.
pub fn relative_maha_score(zbar: &[f64], fit_id: &GaussianFit, fit_bg: &GaussianFit) -> Result<f64> {
    check_dim(fit_id.dim(), fit_bg.dim())?;
    Ok(fit_bg.distance_sq(zbar)? - fit_id.distance_sq(zbar)?)
}

/// Directions `w_j = v_j / √λ_j` of the regularised covariance, so that
/// `Σ_j (w_jᵀ(z̄ − μ))²` is the Mahalanobis distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub weights: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn decompose_covariance(fit: &GaussianFit) -> Result<Decomposition> {
    let eig = symmetric_eigen(&fit.regularized_cov())?;
    if eig.values.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Numerical("regularised covariance has a non-positive eigenvalue".into()));
    }
    let weights = eig
        .values
        .iter()
        .enumerate()
        .map(|(j, l)| eig.vectors.column(j).iter().map(|v| v / l.sqrt()).collect())
        .collect();
    Ok(Decomposition {
        weights,
        eigenvalues: eig.values,
        mean: fit.mean().to_vec(),
    })
}

impl Decomposition {
    pub fn distance_sq(&self, zbar: &[f64]) -> Result<f64> {
        check_dim(self.mean.len(), zbar.len())?;
        Ok(self
            .weights
            .iter()
            .map(|w| {
                let p: f64 = w.iter().zip(zbar).zip(&self.mean).map(|((w, z), m)| w * (z - m)).sum();
                p * p
            })
            .sum())
    }

    /// `Σ_j w_j w_jᵀ`.
    pub fn precision(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        let mut out = DMatrix::zeros(d, d);
        for w in &self.weights {
            let v = DVector::from_column_slice(w);
            out += &v * v.transpose();
        }
        out
    }

    /// A `β = 0`, one-query-per-head model with the directions as heads and
    /// `μ_j = w_jᵀμ`. With uniform sequence lengths this is the model that
    /// freezing on the fitted corpus would give.
    pub fn to_apood_model(&self) -> Result<ApoodModel> {
        let d = self.mean.len();
        let heads = self
            .weights
            .iter()
            .map(|w| QueryBlock::new(d, w.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mu = self
            .weights
            .iter()
            .map(|w| w.iter().zip(&self.mean).map(|(a, b)| a * b).sum())
            .collect();
        ApoodModel::with_references(ApoodParams::new(heads)?, Attention::dot(0.0), mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
        let mix: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (0..n)
            .map(|_| {
                let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                (0..d)
                    .map(|r| scale * (0..d).map(|c| mix[r * d + c] * g[c]).sum::<f64>() + r as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_point_fit() {
        let fit = maha_fit(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(fit.mean(), &[1.0, 0.0]);
        assert_eq!(fit.cov(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!((fit.ridge() - 0.5e-6).abs() < 1e-20);
        let rebuilt = fit.chol() * fit.chol().transpose();
        assert!((rebuilt - fit.regularized_cov()).amax() <= 1e-8);
    }

    #[test]
    fn isotropic_cloud_has_isotropic_cov() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..20000)
            .map(|_| (0..3).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let fit = maha_fit(&pts).unwrap();
        assert!((fit.cov() - DMatrix::identity(3, 3) * 0.25).amax() < 0.02);
    }

    #[test]
    fn rank_deficient_cloud_still_scores() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let fit = maha_fit(&pts).unwrap();
        let s = maha_score(&[1.0, -3.0], &fit).unwrap();
        assert!(s.is_finite() && s < 0.0);
        assert!(maha_fit(&pts[..1]).is_err());
    }

    #[test]
    fn hand_values() {
        let fit = GaussianFit::with_ridge(vec![1.0, 1.0], DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(maha_score(&[1.0, 1.0], &fit).unwrap(), 0.0);
        assert!((maha_score(&[4.0, 5.0], &fit).unwrap() + 25.0).abs() < 1e-12);
        assert!(matches!(maha_score(&[1.0], &fit), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn score_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = cloud(&mut rng, 200, 6, 1.3);
        let fit = maha_fit(&pts).unwrap();
        let inv = fit.regularized_cov().try_inverse().unwrap();
        for _ in 0..50 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let delta = DVector::from_vec(z.iter().zip(fit.mean()).map(|(a, b)| a - b).collect());
            let expected = -(delta.transpose() * &inv * &delta)[(0, 0)];
            let got = maha_score(&z, &fit).unwrap();
            assert!((got - expected).abs() <= 1e-8 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = cloud(&mut rng, 100, 4, 1.0);
        let shift = [3.0, -7.0, 0.5, 11.0];
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
        let (a, b) = (maha_fit(&pts).unwrap(), maha_fit(&moved).unwrap());
        for _ in 0..20 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let zm: Vec<f64> = z.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let (s1, s2) = (maha_score(&z, &a).unwrap(), maha_score(&zm, &b).unwrap());
            assert!((s1 - s2).abs() <= 1e-9 * (1.0 + s1.abs()));
        }
    }

    #[test]
    fn relative_maha_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let id = maha_fit(&cloud(&mut rng, 50, 3, 1.0)).unwrap();
        let bg = maha_fit(&cloud(&mut rng, 80, 3, 2.0)).unwrap();
        let z = vec![0.3, -1.0, 2.0];
        assert_eq!(relative_maha_score(&z, &id, &id).unwrap(), 0.0);
        let at_mean = relative_maha_score(id.mean(), &id, &bg).unwrap();
        assert!(at_mean >= 0.0);
        assert!((at_mean - bg.distance_sq(id.mean()).unwrap()).abs() <= 1e-12);
        let composed = maha_score(&z, &id).unwrap() - maha_score(&z, &bg).unwrap();
        assert!((relative_maha_score(&z, &id, &bg).unwrap() - composed).abs() <= 1e-12);
    }

    #[test]
    fn decomposition_of_diagonal() {
        let fit = GaussianFit::with_ridge(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]), 0.0)
            .unwrap();
        let dec = decompose_covariance(&fit).unwrap();
        assert!((dec.weights[0][0].abs() - 1.0).abs() < 1e-15 && dec.weights[0][1] == 0.0);
        assert!((dec.weights[1][1].abs() - 0.5).abs() < 1e-15 && dec.weights[1][0] == 0.0);
        let id = GaussianFit::with_ridge(vec![0.0; 3], DMatrix::identity(3, 3), 0.0).unwrap();
        let p = decompose_covariance(&id).unwrap().precision();
        assert!((p - DMatrix::identity(3, 3)).amax() <= 1e-12);
    }

    #[test]
    fn decomposition_round_trip() {
        for (d, seed) in [(8, 5), (16, 6), (64, 7)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fit = maha_fit(&cloud(&mut rng, 4 * d, d, 1.0)).unwrap();
            let dec = decompose_covariance(&fit).unwrap();
            let inv = fit.regularized_cov().try_inverse().unwrap();
            let rel = (dec.precision() - &inv).norm() / inv.norm();
            assert!(rel <= 1e-6, "d={d}: {rel}");
            for _ in 0..100 {
                let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let m = fit.distance_sq(&z).unwrap();
                let got = dec.distance_sq(&z).unwrap();
                assert!((got - m).abs() <= 1e-6 * (1.0 + m), "d={d}: {got} vs {m}");
            }
        }
    }
}
