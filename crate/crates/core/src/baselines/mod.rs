//! Embedding-space reference detectors. All of them work on mean-pooled
//! sequences and follow the same contract as the main model: higher scores
//! mean more in-distribution.

mod eigen;
mod gaussian;
mod knn;
mod logit;
mod svdd;

pub use eigen::{symmetric_eigen, SymmetricEigen, MAX_SWEEPS};
pub use gaussian::{
    decompose_covariance, maha_fit, maha_score, relative_maha_score, ridge_for, Decomposition,
    GaussianFit, RIDGE_FACTOR,
};
pub use knn::{knn_score, l2_normalize, KnnModel, DEFAULT_K};
pub use logit::{logit_train, LogitModel};
pub use svdd::{default_out_dim, sad_train, svdd_train, SvddInit, SvddModel, SAD_EPS};

use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingSequence};
use crate::error::{check_dim, Error, Result};
use crate::optim::OptimizerKind;

/// Token mean of one sequence.
pub fn mean_pool(z: &EmbeddingSequence) -> Vec<f64> {
    let mut out = vec![0.0; z.dim()];
    for tok in z.tokens() {
        for (o, v) in out.iter_mut().zip(tok) {
            *o += *v as f64;
        }
    }
    let s = z.len() as f64;
    out.iter_mut().for_each(|v| *v /= s);
    out
}

pub fn mean_pool_corpus(corpus: &Corpus) -> Vec<Vec<f64>> {
    corpus.iter().map(mean_pool).collect()
}

/// Settings shared by the gradient-trained baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHyperparams {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub svdd_init: SvddInit,
}

impl Default for BaselineHyperparams {
    fn default() -> Self {
        BaselineHyperparams {
            lr: 0.01,
            steps: 1000,
            seed: 0,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::Adam,
            svdd_init: SvddInit::Random,
        }
    }
}

impl BaselineHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::arg("weight decay must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Maha,
    Knn,
    Svdd,
    Sad,
    Logit,
    RelMaha,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Maha,
        Method::Knn,
        Method::Svdd,
        Method::Sad,
        Method::Logit,
        Method::RelMaha,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Maha => "maha",
            Method::Knn => "knn",
            Method::Svdd => "svdd",
            Method::Sad => "sad",
            Method::Logit => "logit",
            Method::RelMaha => "relmaha",
        }
    }

    pub fn needs_aux(self) -> bool {
        matches!(self, Method::Logit | Method::RelMaha)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown baseline method {s:?}")))
    }
}

/// Any fitted baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Maha(GaussianFit),
    RelMaha { id: GaussianFit, bg: GaussianFit },
    Knn(KnnModel),
    Svdd(SvddModel),
    Sad(SvddModel),
    Logit(LogitModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub hp: BaselineHyperparams,
    pub k: usize,
    pub out_dim: Option<usize>,
    pub eta: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            hp: BaselineHyperparams::default(),
            k: DEFAULT_K,
            out_dim: None,
            eta: 1.0,
        }
    }
}

impl BaselineModel {
    /// Fits `method` on mean-pooled ID (and AUX where used) sequences.
    pub fn fit(method: Method, id: &Corpus, aux: Option<&Corpus>, opts: &FitOptions) -> Result<Self> {
        if let Some(a) = aux {
            check_dim(id.dim(), a.dim())?;
        }
        let id_means = mean_pool_corpus(id);
        let aux_means = aux.map(mean_pool_corpus).unwrap_or_default();
        if method.needs_aux() && aux_means.is_empty() {
            return Err(Error::arg(format!("{} needs an AUX corpus", method.as_str())));
        }
        let out_dim = opts.out_dim.unwrap_or_else(|| default_out_dim(id.dim()));
        Ok(match method {
            Method::Maha => BaselineModel::Maha(maha_fit(&id_means)?),
            Method::Knn => BaselineModel::Knn(KnnModel::fit(&id_means, opts.k.min(id_means.len()))?),
            Method::Svdd => BaselineModel::Svdd(svdd_train(&id_means, out_dim, &opts.hp)?),
            Method::Sad => BaselineModel::Sad(sad_train(&id_means, &aux_means, out_dim, &opts.hp, opts.eta)?),
            Method::Logit => BaselineModel::Logit(logit_train(&id_means, &aux_means, &opts.hp)?),
            Method::RelMaha => {
                let both: Vec<Vec<f64>> = id_means.iter().chain(&aux_means).cloned().collect();
                BaselineModel::RelMaha {
                    id: maha_fit(&id_means)?,
                    bg: maha_fit(&both)?,
                }
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            BaselineModel::Maha(_) => Method::Maha,
            BaselineModel::RelMaha { .. } => Method::RelMaha,
            BaselineModel::Knn(_) => Method::Knn,
            BaselineModel::Svdd(_) => Method::Svdd,
            BaselineModel::Sad(_) => Method::Sad,
            BaselineModel::Logit(_) => Method::Logit,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaselineModel::Maha(f) => f.dim(),
            BaselineModel::RelMaha { id, .. } => id.dim(),
            BaselineModel::Knn(k) => k.dim(),
            BaselineModel::Svdd(m) | BaselineModel::Sad(m) => m.dim(),
            BaselineModel::Logit(l) => l.dim(),
        }
    }

    pub fn score_mean(&self, zbar: &[f64]) -> Result<f64> {
        match self {
            BaselineModel::Maha(f) => maha_score(zbar, f),
            BaselineModel::RelMaha { id, bg } => relative_maha_score(zbar, id, bg),
            BaselineModel::Knn(k) => k.score(zbar),
            BaselineModel::Svdd(m) | BaselineModel::Sad(m) => m.score(zbar),
            BaselineModel::Logit(l) => l.score(zbar),
        }
    }

    pub fn score(&self, z: &EmbeddingSequence) -> Result<f64> {
        check_dim(self.dim(), z.dim())?;
        self.score_mean(&mean_pool(z))
    }

    pub fn score_corpus(&self, corpus: &Corpus) -> Result<Vec<f64>> {
        check_dim(self.dim(), corpus.dim())?;
        corpus.iter().map(|z| self.score(z)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&BaselineFile::from(self)).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BaselineFile = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        file.into_model().map_err(|e| match e {
            Error::Format(_) => e,
            other => Error::format(other.to_string()),
        })
    }
}

pub fn save_baseline(model: &BaselineModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_baseline(path: impl AsRef<Path>) -> Result<BaselineModel> {
    BaselineModel::from_json(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    ridge: f64,
}

impl From<&GaussianFit> for GaussianRepr {
    fn from(f: &GaussianFit) -> Self {
        GaussianRepr {
            mean: f.mean().to_vec(),
            cov: f.cov().row_iter().map(|r| r.iter().copied().collect()).collect(),
            ridge: f.ridge(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::format(format!("{what} is not a {}-column matrix", ncols)));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl GaussianRepr {
    fn into_fit(self, dim: usize) -> Result<GaussianFit> {
        if self.mean.len() != dim {
            return Err(Error::format(format!("mean has {} entries, dim is {dim}", self.mean.len())));
        }
        let cov = matrix(&self.cov, dim, "cov")?;
        if cov.nrows() != dim {
            return Err(Error::format("cov is not square"));
        }
        if (&cov - cov.transpose()).amax() > 1e-10 {
            return Err(Error::format("cov is not symmetric"));
        }
        GaussianFit::with_ridge(self.mean, cov, self.ridge)
    }
}

struct SvddRepr {
    map: Vec<Vec<f64>>,
    center: Vec<f64>,
}

impl SvddRepr {
    fn into_model(self, dim: usize, eta: f64) -> Result<SvddModel> {
        let map = matrix(&self.map, dim, "map")?;
        SvddModel::new(map, DVector::from_vec(self.center), eta)
    }
}

impl From<&SvddModel> for SvddRepr {
    fn from(m: &SvddModel) -> Self {
        SvddRepr {
            map: m.map.row_iter().map(|r| r.iter().copied().collect()).collect(),
            center: m.center.iter().copied().collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "format", deny_unknown_fields)]
enum BaselineFile {
    #[serde(rename = "maha-v1")]
    Maha {
        dim: usize,
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
        ridge: f64,
    },
    #[serde(rename = "relmaha-v1")]
    RelMaha { dim: usize, id: GaussianRepr, bg: GaussianRepr },
    #[serde(rename = "knn-v1")]
    Knn { dim: usize, k: usize, bank: Vec<Vec<f64>> },
    #[serde(rename = "svdd-v1")]
    Svdd {
        dim: usize,
        map: Vec<Vec<f64>>,
        center: Vec<f64>,
    },
    #[serde(rename = "sad-v1")]
    Sad {
        dim: usize,
        eta: f64,
        map: Vec<Vec<f64>>,
        center: Vec<f64>,
    },
    #[serde(rename = "logit-v1")]
    Logit { dim: usize, weights: Vec<f64>, bias: f64 },
}

impl From<&BaselineModel> for BaselineFile {
    fn from(m: &BaselineModel) -> Self {
        let dim = m.dim();
        match m {
            BaselineModel::Maha(f) => {
                let GaussianRepr { mean, cov, ridge } = f.into();
                BaselineFile::Maha { dim, mean, cov, ridge }
            }
            BaselineModel::RelMaha { id, bg } => BaselineFile::RelMaha {
                dim,
                id: id.into(),
                bg: bg.into(),
            },
            BaselineModel::Knn(k) => BaselineFile::Knn {
                dim,
                k: k.k(),
                bank: k.bank().to_vec(),
            },
            BaselineModel::Svdd(s) => {
                let SvddRepr { map, center } = s.into();
                BaselineFile::Svdd { dim, map, center }
            }
            BaselineModel::Sad(s) => {
                let SvddRepr { map, center } = s.into();
                BaselineFile::Sad {
                    dim,
                    eta: s.aux_eta,
                    map,
                    center,
                }
            }
            BaselineModel::Logit(l) => BaselineFile::Logit {
                dim,
                weights: l.weights.clone(),
                bias: l.bias,
            },
        }
    }
}

impl BaselineFile {
    fn into_model(self) -> Result<BaselineModel> {
        let model = match self {
            BaselineFile::Maha { dim, mean, cov, ridge } => {
                BaselineModel::Maha(GaussianRepr { mean, cov, ridge }.into_fit(dim)?)
            }
            BaselineFile::RelMaha { dim, id, bg } => BaselineModel::RelMaha {
                id: id.into_fit(dim)?,
                bg: bg.into_fit(dim)?,
            },
            BaselineFile::Knn { dim, k, bank } => BaselineModel::Knn(KnnModel::from_normalized(dim, k, bank)?),
            BaselineFile::Svdd { dim, map, center } => {
                BaselineModel::Svdd(SvddRepr { map, center }.into_model(dim, 0.0)?)
            }
            BaselineFile::Sad { dim, eta, map, center } => {
                BaselineModel::Sad(SvddRepr { map, center }.into_model(dim, eta)?)
            }
            BaselineFile::Logit { dim, weights, bias } => {
                if weights.len() != dim {
                    return Err(Error::format(format!("{} weights for dim {dim}", weights.len())));
                }
                BaselineModel::Logit(LogitModel::new(weights, bias)?)
            }
        };
        if model.dim() == 0 {
            return Err(Error::format("zero-dimensional baseline"));
        }
        Ok(model)
    }
}
