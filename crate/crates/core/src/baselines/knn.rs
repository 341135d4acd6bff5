use crate::error::{check_dim, Error, Result};

pub const DEFAULT_K: usize = 10;

/// Unit-length copy of `v`; the zero vector stays zero.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// A bank of L2-normalised reference vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    dim: usize,
    k: usize,
    bank: Vec<Vec<f64>>,
}

impl KnnModel {
    pub fn fit(means: &[Vec<f64>], k: usize) -> Result<Self> {
        let first = means.first().ok_or_else(|| Error::arg("KNN bank is empty"))?;
        let dim = first.len();
        for m in means {
            check_dim(dim, m.len())?;
        }
        if k == 0 || k > means.len() {
            return Err(Error::arg(format!("k = {k} with a bank of {}", means.len())));
        }
        Ok(KnnModel {
            dim,
            k,
            bank: means.iter().map(|m| l2_normalize(m)).collect(),
        })
    }

    pub(crate) fn from_normalized(dim: usize, k: usize, bank: Vec<Vec<f64>>) -> Result<Self> {
        if bank.is_empty() || k == 0 || k > bank.len() {
            return Err(Error::arg("invalid KNN bank or k"));
        }
        for b in &bank {
            check_dim(dim, b.len())?;
        }
        Ok(KnnModel { dim, k, bank })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bank(&self) -> &[Vec<f64>] {
        &self.bank
    }

    /// Negative distance from the normalised query to its k-th nearest
    /// bank vector.
    pub fn score(&self, zbar: &[f64]) -> Result<f64> {
        check_dim(self.dim, zbar.len())?;
        let q = l2_normalize(zbar);
        let mut dists: Vec<f64> = self
            .bank
            .iter()
            .map(|b| b.iter().zip(&q).map(|(a, c)| (a - c) * (a - c)).sum::<f64>())
            .collect();
        let (_, kth, _) = dists.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        Ok(-kth.sqrt())
    }
}

pub fn knn_score(zbar: &[f64], bank: &[Vec<f64>], k: usize) -> Result<f64> {
    KnnModel::fit(bank, k)?.score(zbar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_values() {
        let bank = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(knn_score(&[1.0, 0.0], &bank, 1).unwrap(), 0.0);
        assert!((knn_score(&[1.0, 0.0], &bank, 2).unwrap() + 2f64.sqrt()).abs() < 1e-15);
        assert!(knn_score(&[1.0, 0.0], &bank, 3).is_err());
        assert!(knn_score(&[1.0, 0.0], &bank, 0).is_err());
    }

    #[test]
    fn matches_sorting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let model = KnnModel::fit(&bank, DEFAULT_K).unwrap();
        for _ in 0..30 {
            let q: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qn = l2_normalize(&q);
            let mut d: Vec<f64> = bank
                .iter()
                .map(|b| {
                    let bn = l2_normalize(b);
                    bn.iter().zip(&qn).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            assert_eq!(model.score(&q).unwrap(), -d[DEFAULT_K - 1]);
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> = bank.iter().map(|b| b.iter().map(|x| x * 7.5).collect()).collect();
        let q = vec![0.2, -0.4, 0.9];
        let q2: Vec<f64> = q.iter().map(|x| x * 0.01).collect();
        let a = knn_score(&q, &bank, 3).unwrap();
        let b = knn_score(&q2, &scaled, 3).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }
}
