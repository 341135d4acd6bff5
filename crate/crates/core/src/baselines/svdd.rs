//! Deep SVDD and Deep SAD with a linear encoder on mean-pooled embeddings.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::BaselineHyperparams;
use crate::error::{check_dim, Error, Result};
use crate::optim::{cosine_lr, Optimizer};

pub const SAD_EPS: f64 = 1e-6;

/// `⌈D/2⌉`.
pub fn default_out_dim(dim: usize) -> usize {
    dim.div_ceil(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvddInit {
    #[default]
    Random,
    /// `ψ = [I 0]`, truncated or zero-padded to the output size.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvddModel {
    /// `out_dim × D`.
    pub map: DMatrix<f64>,
    pub center: DVector<f64>,
    /// Zero for Deep SVDD.
    pub aux_eta: f64,
}

impl SvddModel {
    pub fn new(map: DMatrix<f64>, center: DVector<f64>, aux_eta: f64) -> Result<Self> {
        if map.nrows() == 0 || map.ncols() == 0 {
            return Err(Error::arg("empty SVDD map"));
        }
        check_dim(map.nrows(), center.len())?;
        if map.iter().chain(center.iter()).any(|v| !v.is_finite()) || !(aux_eta >= 0.0 && aux_eta.is_finite()) {
            return Err(Error::arg("SVDD parameters must be finite"));
        }
        Ok(SvddModel { map, center, aux_eta })
    }

    pub fn dim(&self) -> usize {
        self.map.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.map.nrows()
    }

    fn sq_dist(&self, zbar: &[f64]) -> f64 {
        (&self.map * DVector::from_column_slice(zbar) - &self.center).norm_squared()
    }

    /// `−‖ψ(z̄) − c‖²`.
    pub fn score(&self, zbar: &[f64]) -> Result<f64> {
        check_dim(self.dim(), zbar.len())?;
        Ok(-self.sq_dist(zbar))
    }
}

fn init_map(dim: usize, out_dim: usize, init: SvddInit, seed: u64) -> Result<DMatrix<f64>> {
    Ok(match init {
        SvddInit::Identity => DMatrix::from_fn(out_dim, dim, |r, c| if r == c { 1.0 } else { 0.0 }),
        SvddInit::Random => {
            let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).map_err(|e| Error::arg(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // row-major draws
            let values: Vec<f64> = (0..out_dim * dim).map(|_| normal.sample(&mut rng)).collect();
            DMatrix::from_row_slice(out_dim, dim, &values)
        }
    })
}

fn stack(means: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    for m in means {
        check_dim(dim, m.len())?;
    }
    Ok(DMatrix::from_fn(dim, means.len(), |r, c| means[c][r]))
}

pub fn svdd_train(means: &[Vec<f64>], out_dim: usize, hp: &BaselineHyperparams) -> Result<SvddModel> {
    sad_train(means, &[], out_dim, hp, 0.0)
}

/// Deep SAD. With no AUX vectors or `eta = 0` this is exactly
/// [`svdd_train`].
pub fn sad_train(
    id_means: &[Vec<f64>],
    aux_means: &[Vec<f64>],
    out_dim: usize,
    hp: &BaselineHyperparams,
    eta: f64,
) -> Result<SvddModel> {
    hp.validate()?;
    let first = id_means.first().ok_or_else(|| Error::arg("SVDD needs at least one ID vector"))?;
    let dim = first.len();
    if dim == 0 || out_dim == 0 {
        return Err(Error::arg("SVDD dimensions must be positive"));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::arg("eta must be finite and nonnegative"));
    }
    let x = stack(id_means, dim)?;
    let xa = stack(aux_means, dim)?;
    let use_aux = eta > 0.0 && !aux_means.is_empty();

    let mut map = init_map(dim, out_dim, hp.svdd_init, hp.seed)?;
    let center: DVector<f64> = (&map * &x).column_mean();
    let n = id_means.len() as f64;
    let na = aux_means.len() as f64;

    let mut opt = Optimizer::new(hp.optimizer, out_dim * dim);
    let mut flat: Vec<f64> = map.as_slice().to_vec();
    for step in 0..hp.steps {
        // residuals R = ψX − c·1ᵀ
        let mut r = &map * &x;
        for mut col in r.column_iter_mut() {
            col -= &center;
        }
        let mut loss = r.norm_squared() / n;
        let mut grad = &r * x.transpose() * (2.0 / n);
        if use_aux {
            let mut ra = &map * &xa;
            for mut col in ra.column_iter_mut() {
                col -= &center;
                let q = col.norm_squared() + SAD_EPS;
                loss += eta / (na * q);
                // ∂(1/q) = −2(ψz − c)zᵀ / q²
                col *= -2.0 * eta / (na * q * q);
            }
            grad += &ra * xa.transpose();
        }
        loss += 0.5 * hp.weight_decay * map.norm_squared();
        grad += &map * hp.weight_decay;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite SVDD loss {loss}"),
            });
        }
        opt.step(&mut flat, grad.as_slice(), cosine_lr(hp.lr, step, hp.steps));
        map.copy_from_slice(&flat);
    }
    if map.row_iter().any(|row| row.iter().all(|&v| v == 0.0)) {
        return Err(Error::Divergence {
            step: hp.steps,
            reason: "encoder collapsed to a zero row".into(),
        });
    }
    SvddModel::new(map, center, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob(rng: &mut impl Rng, n: usize, centre: &[f64], spread: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| centre.iter().map(|c| c + rng.gen_range(-spread..spread)).collect())
            .collect()
    }

    #[test]
    fn identity_zero_steps_is_squared_distance_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, 20, &[1.0, -2.0, 0.5], 1.0);
        let hp = BaselineHyperparams {
            steps: 0,
            svdd_init: SvddInit::Identity,
            ..Default::default()
        };
        let model = svdd_train(&pts, 3, &hp).unwrap();
        let mean: Vec<f64> = (0..3).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / 20.0).collect();
        for p in &pts {
            let d: f64 = p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!((model.score(p).unwrap() + d).abs() <= 1e-12);
        }
    }

    #[test]
    fn cluster_members_outscore_far_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob(&mut rng, 50, &[0.0; 4], 0.3);
        let model = svdd_train(&pts, default_out_dim(4), &BaselineHyperparams::default()).unwrap();
        let worst_member = pts.iter().map(|p| model.score(p).unwrap()).fold(f64::INFINITY, f64::min);
        let far = model.score(&[8.0, -8.0, 8.0, 8.0]).unwrap();
        assert!(far < worst_member);
        assert_eq!(model.out_dim(), 2);
    }

    #[test]
    fn sad_reduces_to_svdd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = blob(&mut rng, 30, &[0.0, 0.0, 0.0], 1.0);
        let aux = blob(&mut rng, 10, &[3.0, 3.0, 3.0], 1.0);
        let hp = BaselineHyperparams { steps: 50, ..Default::default() };
        let svdd = svdd_train(&id, 2, &hp).unwrap();
        assert_eq!(sad_train(&id, &[], 2, &hp, 1.0).unwrap().map, svdd.map);
        assert_eq!(sad_train(&id, &aux, 2, &hp, 0.0).unwrap().map, svdd.map);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let hp = BaselineHyperparams::default();
        assert!(svdd_train(&[], 2, &hp).is_err());
        assert!(svdd_train(&[vec![1.0, 2.0], vec![1.0]], 1, &hp).is_err());
        assert_eq!(default_out_dim(5), 3);
        assert_eq!(default_out_dim(768), 384);
    }
}
