//! The attention-pooled directional distance detector.
//!
//! A model is `M` heads, each a [`QueryBlock`] of `T` queries. For a
//! sequence `Z` head `j` yields a pooled similarity `h_j(Z)`; the same
//! pooling over the whole training corpus (all sequences concatenated)
//! yields the frozen reference `μ_j`. Then
//!
//! ```text
//! d²(Z)     = Σ_j (h_j(Z) − μ_j)²
//! s(Z)      = −d²(Z) + Σ_j log ‖W_j‖²_F
//! s_min(Z)  = min_j ( −(h_j(Z) − μ_j)² + log ‖W_j‖²_F )
//! ```
//!
//! Higher scores mean more in-distribution.

mod gradcheck;
mod io;
mod objective;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport, GradCheckSetup};
pub use io::{load_model, save_model, MODEL_FORMAT};
pub use objective::{
    aux_term, grad_loss, loss_sup, loss_unsup, Objective, ObjectiveKind, ParamGrad,
    AUX_DSQ_FLOOR,
};
pub use train::{train, train_from, train_with_log, TrainLog};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EmbeddingSequence, SamplingMode};
use crate::error::{check_dim, Error, Result};
use crate::optim::OptimizerKind;
use crate::pooling::{head_stats, Attention, QueryBlock, Similarity, StreamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub beta: f64,
    pub heads: usize,
    pub queries_per_head: usize,
    pub lambda_aux: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Standard deviation of the query initialisation; `None` means `1/√D`.
    pub init_scale: Option<f64>,
    pub similarity: Similarity,
    /// Include `−Σ_j log ‖W_j‖²` in the unsupervised loss.
    pub norm_penalty: bool,
    pub optimizer: OptimizerKind,
    pub sampling: SamplingMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            beta: 0.5,
            heads: 1,
            queries_per_head: 1,
            lambda_aux: 1.0,
            lr: 0.01,
            steps: 1000,
            batch_size: 512,
            seed: 0,
            init_scale: None,
            similarity: Similarity::Dot,
            norm_penalty: true,
            optimizer: OptimizerKind::Adam,
            sampling: SamplingMode::ShuffleEachEpoch,
        }
    }
}

pub const QUERY_GRID: [usize; 4] = [1, 4, 16, 64];

impl Hyperparams {
    /// `β = 1/√D`, `T = 1`, `M = D`, Adam at 0.01 for 1000 steps of 512.
    pub fn search_defaults(dim: usize) -> Self {
        Hyperparams {
            beta: 1.0 / (dim as f64).sqrt(),
            heads: dim,
            ..Default::default()
        }
    }

    pub fn beta_grid(dim: usize) -> [f64; 5] {
        [1.0 / (dim as f64).sqrt(), 0.25, 0.5, 1.0, 2.0]
    }

    /// Whether `(β, T, M)` sits on the search grid with `M·T = D`.
    pub fn in_search_grid(&self, dim: usize) -> bool {
        let beta_ok = Self::beta_grid(dim)
            .iter()
            .any(|b| (b - self.beta).abs() <= 1e-12);
        beta_ok
            && QUERY_GRID.contains(&self.queries_per_head)
            && self.heads * self.queries_per_head == dim
    }

    pub fn attention(&self) -> Attention {
        Attention {
            beta: self.beta,
            similarity: self.similarity,
        }
    }

    pub fn init_scale_for(&self, dim: usize) -> f64 {
        self.init_scale.unwrap_or(1.0 / (dim as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.heads == 0 || self.queries_per_head == 0 {
            return Err(Error::arg("heads and queries per head must be positive"));
        }
        if !(self.lambda_aux.is_finite() && self.lambda_aux >= 0.0) {
            return Err(Error::arg("lambda_aux must be finite and nonnegative"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if let Some(s) = self.init_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::arg("init scale must be positive"));
            }
        }
        Ok(())
    }
}

/// The learnable part of a model: `M` query blocks of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ApoodParams {
    heads: Vec<QueryBlock>,
}

impl ApoodParams {
    pub fn new(heads: Vec<QueryBlock>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::arg("a model needs at least one head"))?;
        let (dim, t) = (first.dim(), first.num_queries());
        for h in &heads {
            check_dim(dim, h.dim())?;
            if h.num_queries() != t {
                return Err(Error::arg("all heads need the same number of queries"));
            }
        }
        Ok(ApoodParams { heads })
    }

    /// i.i.d. normal queries with standard deviation `scale`, drawn head by
    /// head so that the first `k` heads of an `M`-head draw equal a `k`-head
    /// draw from the same generator.
    pub fn random(dim: usize, heads: usize, queries: usize, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 || heads == 0 || queries == 0 {
            return Err(Error::arg("dim, heads and queries must be positive"));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::arg(e.to_string()))?;
        let blocks = (0..heads)
            .map(|_| {
                let values = (0..dim * queries).map(|_| normal.sample(rng)).collect();
                QueryBlock::new(dim, values)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    pub fn heads(&self) -> &[QueryBlock] {
        &self.heads
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn dim(&self) -> usize {
        self.heads[0].dim()
    }

    pub fn queries_per_head(&self) -> usize {
        self.heads[0].num_queries()
    }

    /// `log ‖W_j‖²_F` per head.
    pub fn log_norms(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.frobenius_sq().ln()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.heads.iter().map(|h| h.values().len()).sum()
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        self.heads.iter().flat_map(|h| h.values().iter().copied()).collect()
    }

    pub(crate) fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for h in &mut self.heads {
            let n = h.values().len();
            h.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    #[cfg(test)]
    pub(crate) fn head_mut(&mut self, j: usize) -> &mut QueryBlock {
        &mut self.heads[j]
    }
}

/// Which score to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Sum,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distance {
    pub total: f64,
    pub per_head: Vec<f64>,
}

/// Parameters plus pooling settings plus, once frozen, the corpus references.
#[derive(Debug, Clone, PartialEq)]
pub struct ApoodModel {
    params: ApoodParams,
    attention: Attention,
    mu: Option<Vec<f64>>,
    log_norms: Vec<f64>,
}

impl ApoodModel {
    /// An unfrozen model; call [`ApoodModel::freeze`] before scoring.
    pub fn new(params: ApoodParams, attention: Attention) -> Result<Self> {
        attention.validate()?;
        let log_norms = params.log_norms();
        Ok(ApoodModel {
            params,
            attention,
            mu: None,
            log_norms,
        })
    }

    /// A frozen model with the given references.
    pub fn with_references(params: ApoodParams, attention: Attention, mu: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(params, attention)?;
        if mu.len() != model.params.num_heads() {
            return Err(Error::arg(format!(
                "{} references for {} heads",
                mu.len(),
                model.params.num_heads()
            )));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::arg("references must be finite"));
        }
        model.mu = Some(mu);
        Ok(model)
    }

    pub fn params(&self) -> &ApoodParams {
        &self.params
    }

    pub fn attention(&self) -> Attention {
        self.attention
    }

    pub fn beta(&self) -> f64 {
        self.attention.beta
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn num_heads(&self) -> usize {
        self.params.num_heads()
    }

    pub fn is_frozen(&self) -> bool {
        self.mu.is_some()
    }

    pub fn mu(&self) -> Option<&[f64]> {
        self.mu.as_deref()
    }

    pub fn log_norms(&self) -> &[f64] {
        &self.log_norms
    }

    /// Pools every head over the whole corpus and stores the references.
    /// Streams sequence by sequence for `β > 0`; `β = 0` is a plain mean of
    /// similarities over all tokens.
    pub fn freeze(&mut self, corpus: &Corpus) -> Result<()> {
        self.mu = Some(corpus_references(&self.params, self.attention, corpus)?);
        Ok(())
    }

    fn frozen_mu(&self) -> Result<&[f64]> {
        self.mu
            .as_deref()
            .ok_or_else(|| Error::State("model has no corpus references; freeze it first".into()))
    }

    /// `h_j(Z)` for every head.
    pub fn head_values(&self, z: &EmbeddingSequence) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.dim())?;
        let mut scratch = Vec::new();
        Ok(self
            .params
            .heads()
            .iter()
            .map(|w| head_stats(z.values(), w, self.attention, &mut scratch).value)
            .collect())
    }

    pub fn distance_sq(&self, z: &EmbeddingSequence) -> Result<Distance> {
        let mu = self.frozen_mu()?;
        let per_head: Vec<f64> = self
            .head_values(z)?
            .iter()
            .zip(mu)
            .map(|(h, m)| (h - m) * (h - m))
            .collect();
        Ok(Distance {
            total: per_head.iter().sum(),
            per_head,
        })
    }

    /// Per-head score terms `−d_j² + log ‖W_j‖²`.
    pub fn head_terms(&self, z: &EmbeddingSequence) -> Result<Vec<f64>> {
        let d = self.distance_sq(z)?;
        Ok(d.per_head
            .iter()
            .zip(&self.log_norms)
            .map(|(dj, ln)| ln - dj)
            .collect())
    }

    pub fn score(&self, z: &EmbeddingSequence) -> Result<f64> {
        let d = self.distance_sq(z)?;
        Ok(-d.total + self.log_norms.iter().sum::<f64>())
    }

    pub fn score_min(&self, z: &EmbeddingSequence) -> Result<f64> {
        Ok(self
            .head_terms(z)?
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    pub fn score_with(&self, z: &EmbeddingSequence, kind: ScoreKind) -> Result<f64> {
        match kind {
            ScoreKind::Sum => self.score(z),
            ScoreKind::Min => self.score_min(z),
        }
    }

    /// Scores every sequence in order. Sequences are independent, so the
    /// work fans out over rayon's pool.
    pub fn score_corpus(&self, corpus: &Corpus, kind: ScoreKind) -> Result<Vec<f64>> {
        self.frozen_mu()?;
        check_dim(self.dim(), corpus.dim())?;
        corpus
            .sequences()
            .par_iter()
            .map(|z| self.score_with(z, kind))
            .collect()
    }
}

/// `μ_j` for every head over the concatenation of all corpus sequences.
pub fn corpus_references(params: &ApoodParams, attention: Attention, corpus: &Corpus) -> Result<Vec<f64>> {
    attention.validate()?;
    check_dim(params.dim(), corpus.dim())?;
    if corpus.is_empty() {
        return Err(Error::arg("cannot compute references over an empty corpus"));
    }
    params
        .heads()
        .iter()
        .map(|w| {
            if attention.beta > 0.0 {
                let mut state = StreamState::new();
                for z in corpus {
                    state.absorb(z, w, attention)?;
                }
                Ok(state.value().expect("non-empty corpus"))
            } else {
                let mut total = 0.0;
                let mut count = 0usize;
                for z in corpus {
                    for tok in z.tokens() {
                        for q in w.queries() {
                            total += attention.similarity.eval(tok, q);
                            count += 1;
                        }
                    }
                }
                Ok(total / count as f64)
            }
        })
        .collect()
}
