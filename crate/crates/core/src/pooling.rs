//! Attention pooling over token sequences.
//!
//! A head with queries `W = (w_1, …, w_T)` scores a sequence `Z` through the
//! similarity matrix `A[s, t] = sim(z_s, w_t)` and a softmax taken jointly
//! over all `S·T` entries:
//!
//! ```text
//! P = softmax(β A)            (normalised over rows and columns together)
//! h = Σ_{s,t} P[s,t] A[s,t]   (pooled similarity)
//! ```
//!
//! With the dot product, `h = Tr(Wᵀ Z P)`, i.e. pooling the tokens first and
//! then projecting onto the queries gives the same number. Both routes are
//! exposed: [`head_value`] pools similarities and
//! [`head_value_from_pooled_tokens`] pools tokens.
//!
//! Every softmax is max-shifted. [`StreamState`] folds chunks of a long
//! sequence into the same `h` with two accumulators (a running log-sum-exp
//! and a running weighted mean), so the corpus never has to be materialised.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingSequence;
use crate::error::{check_dim, Error, Result};

/// Token/query similarity used inside the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// `z · w`
    #[default]
    Dot,
    /// `-½ ‖z − w‖²`
    Euclidean,
}

impl Similarity {
    #[inline]
    pub fn eval(self, z: &[f32], w: &[f64]) -> f64 {
        match self {
            Similarity::Dot => z.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum(),
            Similarity::Euclidean => {
                -0.5 * z
                    .iter()
                    .zip(w)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b;
                        d * d
                    })
                    .sum::<f64>()
            }
        }
    }

    /// `out += coef * ∂sim(z, w)/∂w`
    #[inline]
    pub(crate) fn accumulate_grad(self, coef: f64, z: &[f32], w: &[f64], out: &mut [f64]) {
        match self {
            Similarity::Dot => {
                for (o, &a) in out.iter_mut().zip(z) {
                    *o += coef * a as f64;
                }
            }
            Similarity::Euclidean => {
                for ((o, &a), &b) in out.iter_mut().zip(z).zip(w) {
                    *o += coef * (a as f64 - b);
                }
            }
        }
    }
}

/// Inverse temperature plus similarity: everything a head needs besides its
/// queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub beta: f64,
    pub similarity: Similarity,
}

impl Attention {
    pub fn dot(beta: f64) -> Self {
        Attention {
            beta,
            similarity: Similarity::Dot,
        }
    }

    pub fn euclidean(beta: f64) -> Self {
        Attention {
            beta,
            similarity: Similarity::Euclidean,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.beta.is_finite() && self.beta >= 0.0 {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "inverse temperature must be finite and nonnegative, got {}",
                self.beta
            )))
        }
    }
}

/// `T` stacked queries of dimension `D`, stored query-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBlock {
    dim: usize,
    values: Vec<f64>,
}

impl QueryBlock {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return Err(Error::arg(format!(
                "{} values do not form whole {dim}-dimensional queries",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("query values must be finite"));
        }
        let block = QueryBlock { dim, values };
        if block.frobenius_sq() <= 0.0 {
            return Err(Error::DegenerateParams("query block has zero norm".into()));
        }
        Ok(block)
    }

    pub fn from_queries(queries: &[Vec<f64>]) -> Result<Self> {
        let dim = queries.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(dim * queries.len());
        for q in queries {
            check_dim(dim, q.len())?;
            values.extend_from_slice(q);
        }
        Self::new(dim, values)
    }

    pub(crate) fn from_parts_unchecked(dim: usize, values: Vec<f64>) -> Self {
        QueryBlock { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_queries(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn query(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn queries(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// ‖W‖²_F
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, c: f64) -> QueryBlock {
        QueryBlock {
            dim: self.dim,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Result of pooling one sequence with one head.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledHead {
    pub value: f64,
    /// `S × T` attention weights, present when requested.
    pub attn: Option<Array2<f64>>,
}

/// Log-sum-exp of `β A` and the pooled similarity for one run of tokens.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadStats {
    pub lse: f64,
    pub value: f64,
}

/// Fills `scratch` with the `S × T` similarities of `tokens` against `w`.
fn fill_similarities(
    tokens: &[f32],
    w: &QueryBlock,
    sim: Similarity,
    scratch: &mut Vec<f64>,
) {
    scratch.clear();
    for z in tokens.chunks_exact(w.dim) {
        for q in w.queries() {
            scratch.push(sim.eval(z, q));
        }
    }
}

/// Core of every batch path. `tokens` is token-major with `w.dim()` columns
/// and must be non-empty.
pub(crate) fn head_stats(
    tokens: &[f32],
    w: &QueryBlock,
    attn: Attention,
    scratch: &mut Vec<f64>,
) -> HeadStats {
    fill_similarities(tokens, w, attn.similarity, scratch);
    let beta = attn.beta;
    let max = scratch
        .iter()
        .fold(f64::NEG_INFINITY, |m, &a| m.max(beta * a));
    let mut norm = 0.0;
    let mut acc = 0.0;
    for &a in scratch.iter() {
        let e = (beta * a - max).exp();
        norm += e;
        acc += e * a;
    }
    HeadStats {
        lse: max + norm.ln(),
        value: acc / norm,
    }
}

/// Gradients of a head on one run of tokens, given its [`HeadStats`].
///
/// * `grad_value += ∂h/∂W = Σ_{s,t} p_st (1 + β(a_st − h)) ∂a_st/∂w_t`
/// * `grad_sim += Σ_{s,t} p_st ∂a_st/∂w_t`
///
/// The second term is what a caller needs to move `h` into a larger softmax
/// (e.g. the batch-wide reference) without revisiting the tokens.
pub(crate) fn head_grads(
    tokens: &[f32],
    w: &QueryBlock,
    attn: Attention,
    stats: HeadStats,
    grad_value: &mut [f64],
    grad_sim: &mut [f64],
) {
    let d = w.dim;
    let beta = attn.beta;
    for z in tokens.chunks_exact(d) {
        for (t, q) in w.queries().enumerate() {
            let a = attn.similarity.eval(z, q);
            let p = (beta * a - stats.lse).exp();
            let range = t * d..(t + 1) * d;
            attn.similarity
                .accumulate_grad(p * (1.0 + beta * (a - stats.value)), z, q, &mut grad_value[range.clone()]);
            attn.similarity.accumulate_grad(p, z, q, &mut grad_sim[range]);
        }
    }
}

/// Joint softmax of `β A` over all entries.
pub fn matrix_softmax(similarities: &Array2<f64>, beta: f64) -> Result<Array2<f64>> {
    if similarities.is_empty() {
        return Err(Error::arg("softmax of an empty matrix"));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::arg(format!("beta must be finite and nonnegative, got {beta}")));
    }
    if similarities.iter().any(|a| !a.is_finite()) {
        return Err(Error::arg("similarities must be finite"));
    }
    let max = similarities
        .iter()
        .fold(f64::NEG_INFINITY, |m, &a| m.max(beta * a));
    let mut out = similarities.mapv(|a| (beta * a - max).exp());
    let total = out.sum();
    out.mapv_inplace(|e| e / total);
    Ok(out)
}

/// `S × T` similarity matrix of a sequence against a query block.
pub fn similarity_matrix(z: &EmbeddingSequence, w: &QueryBlock, sim: Similarity) -> Result<Array2<f64>> {
    check_dim(w.dim(), z.dim())?;
    let mut buf = Vec::with_capacity(z.len() * w.num_queries());
    fill_similarities(z.values(), w, sim, &mut buf);
    Ok(Array2::from_shape_vec((z.len(), w.num_queries()), buf).expect("shape matches buffer"))
}

fn pool_single(z: &EmbeddingSequence, w: &[f64], attn: Attention) -> Result<Vec<f64>> {
    attn.validate()?;
    check_dim(w.len(), z.dim())?;
    let block = QueryBlock::from_parts_unchecked(w.len(), w.to_vec());
    let pooled = pool_tokens(z, &block, attn)?;
    Ok(pooled.into_iter().next().expect("one query"))
}

/// `Z softmax(β Zᵀw)`: a convex combination of the tokens.
pub fn attn_pool_single(z: &EmbeddingSequence, w: &[f64], beta: f64) -> Result<Vec<f64>> {
    pool_single(z, w, Attention::dot(beta))
}

/// Token pooling with weights `∝ exp(−(β/2)‖z_s − w‖²)`.
pub fn attn_pool_euclid(z: &EmbeddingSequence, w: &[f64], beta: f64) -> Result<Vec<f64>> {
    pool_single(z, w, Attention::euclidean(beta))
}

/// Multi-query pooling `Z̄ = Z P`: returns `T` pooled tokens of dimension `D`.
/// The weights of each output token sum to that query's share of the joint
/// softmax, not to one.
pub fn pool_tokens(z: &EmbeddingSequence, w: &QueryBlock, attn: Attention) -> Result<Vec<Vec<f64>>> {
    attn.validate()?;
    let sims = similarity_matrix(z, w, attn.similarity)?;
    let p = matrix_softmax(&sims, attn.beta)?;
    let mut pooled = vec![vec![0.0; z.dim()]; w.num_queries()];
    for (s, tok) in z.tokens().enumerate() {
        for (t, out) in pooled.iter_mut().enumerate() {
            let weight = p[[s, t]];
            for (o, &v) in out.iter_mut().zip(tok) {
                *o += weight * v as f64;
            }
        }
    }
    Ok(pooled)
}

/// Pooled similarity `Σ_{s,t} P[s,t]·A[s,t]` (similarity-pooling route).
pub fn head_value(z: &EmbeddingSequence, w: &QueryBlock, attn: Attention) -> Result<PooledHead> {
    attn.validate()?;
    check_dim(w.dim(), z.dim())?;
    let stats = head_stats(z.values(), w, attn, &mut Vec::new());
    Ok(PooledHead {
        value: stats.value,
        attn: None,
    })
}

/// Like [`head_value`] but also returns the attention matrix.
pub fn head_value_with_attention(
    z: &EmbeddingSequence,
    w: &QueryBlock,
    attn: Attention,
) -> Result<PooledHead> {
    attn.validate()?;
    let sims = similarity_matrix(z, w, attn.similarity)?;
    let p = matrix_softmax(&sims, attn.beta)?;
    let value = (&p * &sims).sum();
    Ok(PooledHead {
        value,
        attn: Some(p),
    })
}

/// `Tr(Wᵀ Z̄)` with `Z̄` from [`pool_tokens`] (token-pooling route). Agrees
/// with [`head_value`] for the dot-product similarity.
pub fn head_value_from_pooled_tokens(
    z: &EmbeddingSequence,
    w: &QueryBlock,
    attn: Attention,
) -> Result<f64> {
    let pooled = pool_tokens(z, w, attn)?;
    Ok(pooled
        .iter()
        .zip(w.queries())
        .map(|(zbar, q)| zbar.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
        .sum())
}

/// Running state for pooling a sequence that arrives in chunks.
#[derive(Debug, Clone)]
pub struct StreamState {
    lse: f64,
    pooled: f64,
    tokens: usize,
    scratch: Vec<f64>,
}

impl Default for StreamState {
    fn default() -> Self {
        StreamState {
            lse: f64::NEG_INFINITY,
            pooled: 0.0,
            tokens: 0,
            scratch: Vec::new(),
        }
    }
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Running log-sum-exp of `β a_st`; `-inf` before any token.
    pub fn lse(&self) -> f64 {
        self.lse
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Pooled similarity over everything absorbed so far.
    pub fn value(&self) -> Option<f64> {
        (self.tokens > 0).then_some(self.pooled)
    }

    fn merge_stats(&mut self, chunk: HeadStats, n_tokens: usize) {
        if self.tokens == 0 {
            self.lse = chunk.lse;
            self.pooled = chunk.value;
        } else {
            let hi = self.lse.max(chunk.lse);
            let lse = hi + ((self.lse - hi).exp() + (chunk.lse - hi).exp()).ln();
            self.pooled =
                self.pooled * (self.lse - lse).exp() + chunk.value * (chunk.lse - lse).exp();
            self.lse = lse;
        }
        self.tokens += n_tokens;
    }

    /// Folds a run of token-major values into the state.
    pub fn absorb_tokens(&mut self, tokens: &[f32], w: &QueryBlock, attn: Attention) -> Result<()> {
        if !(attn.beta.is_finite() && attn.beta > 0.0) {
            return Err(Error::arg(format!(
                "streaming pooling needs beta > 0, got {}",
                attn.beta
            )));
        }
        if tokens.len() % w.dim() != 0 {
            return Err(Error::arg("token buffer is not a whole number of tokens"));
        }
        if tokens.is_empty() {
            return Ok(());
        }
        let stats = head_stats(tokens, w, attn, &mut self.scratch);
        self.merge_stats(stats, tokens.len() / w.dim());
        Ok(())
    }

    pub fn absorb(&mut self, chunk: &EmbeddingSequence, w: &QueryBlock, attn: Attention) -> Result<()> {
        check_dim(w.dim(), chunk.dim())?;
        self.absorb_tokens(chunk.values(), w, attn)
    }
}

/// Pooled similarity of the concatenation of `chunks`, computed one chunk
/// at a time.
pub fn stream_head_value<'a>(
    chunks: impl IntoIterator<Item = &'a EmbeddingSequence>,
    w: &QueryBlock,
    attn: Attention,
) -> Result<f64> {
    let mut state = StreamState::new();
    for chunk in chunks {
        state.absorb(chunk, w, attn)?;
    }
    state
        .value()
        .ok_or_else(|| Error::arg("streaming pooling over zero tokens"))
}
