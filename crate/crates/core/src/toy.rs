//! Two-token toy problem in 2-D.
//!
//! ID sequences hold one token near `(1, 1)` and one near `(−1, −1)`; OOD
//! sequences one near `(−1, 1)` and one near `(1, −1)`. Both classes have
//! the same mean, so any mean-pooled detector is at chance, while a query
//! that attends to a single token separates them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{maha_fit, maha_score, mean_pool, mean_pool_corpus, svdd_train, BaselineHyperparams};
use crate::corpus::{Corpus, EmbeddingSequence, Label};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::model::{train, ApoodParams, Hyperparams, Objective, ObjectiveKind, ScoreKind};
use crate::pooling::{QueryBlock, Similarity};

pub const GRID_SIZE: usize = 100;
pub const GRID_RANGE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_per_class: usize,
    pub sigma: f64,
    pub seed: u64,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_per_class: 500,
            sigma: 0.1,
            seed: 0,
            beta: 5.0,
            lr: 0.05,
            steps: 500,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::arg("n_per_class must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg("sigma must be positive"));
        }
        Ok(())
    }

    /// M = 1, T = 1, Euclidean similarity, full batch, no norm penalty.
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            beta: self.beta,
            heads: 1,
            queries_per_head: 1,
            lr: self.lr,
            steps: self.steps,
            batch_size: self.n_per_class,
            seed: self.seed,
            similarity: Similarity::Euclidean,
            norm_penalty: false,
            ..Default::default()
        }
    }
}

const ID_CENTRES: [[f64; 2]; 2] = [[1.0, 1.0], [-1.0, -1.0]];
const OOD_CENTRES: [[f64; 2]; 2] = [[-1.0, 1.0], [1.0, -1.0]];

pub fn generate_toy(cfg: &ToyConfig) -> Result<(Corpus, Corpus)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut class = |centres: &[[f64; 2]; 2], label: Label| -> Result<Corpus> {
        let seqs = (0..cfg.n_per_class)
            .map(|_| {
                let values = centres
                    .iter()
                    .flat_map(|c| c.iter().map(|m| m + noise.sample(&mut rng)).collect::<Vec<_>>())
                    .map(|v| v as f32)
                    .collect();
                EmbeddingSequence::new(2, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::from_sequences(2, seqs, label)
    };
    let id = class(&ID_CENTRES, Label::Id)?;
    let ood = class(&OOD_CENTRES, Label::Ood)?;
    Ok((id, ood))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    pub id: Vec<[[f64; 2]; 2]>,
    pub ood: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `loss_grid[i][j]` is the loss at `w = (xs[j], ys[i])`.
    pub loss_grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotData {
    pub scatter: Scatter,
    pub landscape: Landscape,
    pub w_final: [f64; 2],
    pub histograms: Histograms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub maha_auroc: f64,
    pub svdd_auroc: f64,
    pub apood_auroc: f64,
    /// Grid coordinates of the landscape's local minima.
    pub landscape_minima: Vec<[f64; 2]>,
    pub plot: PlotData,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Training loss of a single Euclidean query `w` over the ID corpus, full
/// batch, evaluated on the grid.
pub fn loss_landscape(id: &Corpus, cfg: &ToyConfig, n: usize) -> Result<Landscape> {
    let hp = cfg.hyperparams();
    let objective = Objective {
        attention: hp.attention(),
        kind: ObjectiveKind::Unsupervised {
            norm_penalty: hp.norm_penalty,
        },
    };
    let batch: Vec<&EmbeddingSequence> = id.iter().collect();
    let xs = linspace(-GRID_RANGE, GRID_RANGE, n);
    let ys = xs.clone();
    let loss_grid = ys
        .iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let params = ApoodParams::new(vec![QueryBlock::new(2, vec![x, y])?])?;
                    objective.loss(&params, &batch, &[])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Landscape { xs, ys, loss_grid })
}

/// Cells strictly below every existing 8-neighbour.
pub fn local_minima(grid: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = grid.len();
    let mut out = Vec::new();
    for i in 0..rows {
        let cols = grid[i].len();
        for j in 0..cols {
            let v = grid[i][j];
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni as usize >= rows || nj as usize >= grid[ni as usize].len() {
                        continue;
                    }
                    if grid[ni as usize][nj as usize] <= v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                out.push((i, j));
            }
        }
    }
    out
}

fn pairs(corpus: &Corpus) -> Vec<[[f64; 2]; 2]> {
    corpus
        .iter()
        .map(|z| {
            let t = |s: usize| [z.token(s)[0] as f64, z.token(s)[1] as f64];
            [t(0), t(1)]
        })
        .collect()
}

/// Mean-pool Mahalanobis, Deep SVDD and the attention-pooled model on the
/// toy problem, evaluated on a fresh draw with `seed + 1`.
pub fn run_toy_experiment(cfg: &ToyConfig) -> Result<ToyReport> {
    let (id, ood) = generate_toy(cfg)?;
    let (test_id, test_ood) = generate_toy(&ToyConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cfg.clone()
    })?;

    let fit = maha_fit(&mean_pool_corpus(&id))?;
    let maha = |c: &Corpus| c.iter().map(|z| maha_score(&mean_pool(z), &fit)).collect::<Result<Vec<_>>>();
    let maha_auroc = auroc(&maha(&test_id)?, &maha(&test_ood)?)?;

    let svdd_hp = BaselineHyperparams {
        seed: cfg.seed,
        ..Default::default()
    };
    let svdd = svdd_train(&mean_pool_corpus(&id), 1, &svdd_hp)?;
    let svdd_scores = |c: &Corpus| c.iter().map(|z| svdd.score(&mean_pool(z))).collect::<Result<Vec<_>>>();
    let svdd_auroc = auroc(&svdd_scores(&test_id)?, &svdd_scores(&test_ood)?)?;

    let model = train(&id, None, &cfg.hyperparams())?;
    let id_scores = model.score_corpus(&test_id, ScoreKind::Sum)?;
    let ood_scores = model.score_corpus(&test_ood, ScoreKind::Sum)?;
    let apood_auroc = auroc(&id_scores, &ood_scores)?;
    let w = model.params().heads()[0].query(0);

    let landscape = loss_landscape(&id, cfg, GRID_SIZE)?;
    let landscape_minima = local_minima(&landscape.loss_grid)
        .into_iter()
        .map(|(i, j)| [landscape.xs[j], landscape.ys[i]])
        .collect();

    Ok(ToyReport {
        maha_auroc,
        svdd_auroc,
        apood_auroc,
        landscape_minima,
        plot: PlotData {
            scatter: Scatter {
                id: pairs(&id),
                ood: pairs(&ood),
            },
            landscape,
            w_final: [w[0], w[1]],
            histograms: Histograms { id_scores, ood_scores },
        },
    })
}
