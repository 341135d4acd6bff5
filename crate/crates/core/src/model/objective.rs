//! Training objectives and their hand-derived gradients.
//!
//! Within a batch the reference `μ̃_j` is the pooled similarity over the
//! concatenated ID sequences of that batch, and gradients flow through it.
//!
//! Unsupervised:
//! `L = (1/n) Σ_i Σ_j (h_ij − μ̃_j)² − Σ_j log ‖W_j‖²`
//!
//! Supervised, with `f(x) = −log(1 − e^{−x})`:
//! `L = (1/(n+n′)) [Σ_ID d_i² + λ Σ_AUX f(max(d_k², floor))]`

use crate::corpus::EmbeddingSequence;
use crate::error::{check_dim, Error, Result};
use crate::pooling::{head_grads, head_stats, Attention, HeadStats};

use super::ApoodParams;

/// Lower clamp on `d²` inside the auxiliary term.
pub const AUX_DSQ_FLOOR: f64 = 1e-8;

/// `−log(1 − exp(−d²))` with `d²` clamped at [`AUX_DSQ_FLOOR`].
pub fn aux_term(dsq: f64) -> f64 {
    let x = dsq.max(AUX_DSQ_FLOOR);
    -(-(-x).exp_m1()).ln()
}

fn aux_term_slope(dsq: f64) -> f64 {
    if dsq < AUX_DSQ_FLOOR {
        0.0
    } else {
        -1.0 / dsq.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    Unsupervised { norm_penalty: bool },
    Supervised { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub attention: Attention,
    pub kind: ObjectiveKind,
}

/// Gradient with the shape of [`ApoodParams`]: one query-major buffer per head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub heads: Vec<Vec<f64>>,
}

impl ParamGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.heads.iter().flatten().copied().collect()
    }
}

impl Objective {
    pub fn unsupervised(attention: Attention) -> Self {
        Objective {
            attention,
            kind: ObjectiveKind::Unsupervised { norm_penalty: true },
        }
    }

    pub fn supervised(attention: Attention, lambda: f64) -> Self {
        Objective {
            attention,
            kind: ObjectiveKind::Supervised { lambda },
        }
    }

    /// `−Σ_j log ‖W_j‖²`, or 0 when this objective has no norm penalty.
    pub fn regularizer(&self, params: &ApoodParams) -> f64 {
        match self.kind {
            ObjectiveKind::Unsupervised { norm_penalty: true } => {
                -params.log_norms().iter().sum::<f64>()
            }
            _ => 0.0,
        }
    }

    pub fn loss(
        &self,
        params: &ApoodParams,
        id: &[&EmbeddingSequence],
        aux: &[&EmbeddingSequence],
    ) -> Result<f64> {
        Ok(self.evaluate(params, id, aux, false)?.0)
    }

    pub fn loss_and_grad(
        &self,
        params: &ApoodParams,
        id: &[&EmbeddingSequence],
        aux: &[&EmbeddingSequence],
    ) -> Result<(f64, ParamGrad)> {
        let (loss, grad) = self.evaluate(params, id, aux, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn validate(
        &self,
        params: &ApoodParams,
        id: &[&EmbeddingSequence],
        aux: &[&EmbeddingSequence],
    ) -> Result<()> {
        self.attention.validate()?;
        if id.is_empty() {
            return Err(Error::arg("the ID batch is empty"));
        }
        for z in id.iter().chain(aux) {
            check_dim(params.dim(), z.dim())?;
        }
        if let ObjectiveKind::Supervised { lambda } = self.kind {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::arg("lambda must be finite and nonnegative"));
            }
        }
        for (j, w) in params.heads().iter().enumerate() {
            let norm = w.frobenius_sq();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DegenerateParams(format!("head {j} has norm² {norm}")));
            }
        }
        Ok(())
    }

    fn evaluate(
        &self,
        params: &ApoodParams,
        id: &[&EmbeddingSequence],
        aux: &[&EmbeddingSequence],
        with_grad: bool,
    ) -> Result<(f64, Option<ParamGrad>)> {
        self.validate(params, id, aux)?;
        let attn = self.attention;
        let aux: &[&EmbeddingSequence] = match self.kind {
            ObjectiveKind::Supervised { .. } => aux,
            ObjectiveKind::Unsupervised { .. } => &[],
        };
        let n_id = id.len();
        let m = params.num_heads();
        let mut scratch = Vec::new();

        // Pass 1: per-sequence pooled values and the batch references.
        let mut id_stats: Vec<Vec<HeadStats>> = Vec::with_capacity(m);
        let mut aux_stats: Vec<Vec<HeadStats>> = Vec::with_capacity(m);
        let mut batch_lse = Vec::with_capacity(m);
        let mut mu = Vec::with_capacity(m);
        for w in params.heads() {
            let stats: Vec<HeadStats> = id
                .iter()
                .map(|z| head_stats(z.values(), w, attn, &mut scratch))
                .collect();
            let hi = stats.iter().fold(f64::NEG_INFINITY, |a, s| a.max(s.lse));
            let lse = hi + stats.iter().map(|s| (s.lse - hi).exp()).sum::<f64>().ln();
            let mu_j: f64 = stats.iter().map(|s| (s.lse - lse).exp() * s.value).sum();
            batch_lse.push(lse);
            mu.push(mu_j);
            id_stats.push(stats);
            aux_stats.push(
                aux.iter()
                    .map(|z| head_stats(z.values(), w, attn, &mut scratch))
                    .collect(),
            );
        }

        let dsq = |stats: &[Vec<HeadStats>], i: usize| -> f64 {
            (0..m)
                .map(|j| {
                    let d = stats[j][i].value - mu[j];
                    d * d
                })
                .sum()
        };
        let id_dsq: Vec<f64> = (0..n_id).map(|i| dsq(&id_stats, i)).collect();
        let aux_dsq: Vec<f64> = (0..aux.len()).map(|k| dsq(&aux_stats, k)).collect();

        // Per-sample weight on ∂(h − μ̃)²; per-head sums keep heads uncoupled
        // in the unsupervised case.
        let (loss, id_coef, aux_coef) = match self.kind {
            ObjectiveKind::Unsupervised { norm_penalty } => {
                let per_head: f64 = (0..m)
                    .map(|j| {
                        id_stats[j]
                            .iter()
                            .map(|s| (s.value - mu[j]) * (s.value - mu[j]))
                            .sum::<f64>()
                            / n_id as f64
                    })
                    .sum();
                let reg = if norm_penalty {
                    -params.log_norms().iter().sum::<f64>()
                } else {
                    0.0
                };
                (per_head + reg, vec![1.0 / n_id as f64; n_id], Vec::new())
            }
            ObjectiveKind::Supervised { lambda } => {
                let denom = (n_id + aux.len()) as f64;
                let id_part: f64 = id_dsq.iter().sum();
                let aux_part: f64 = aux_dsq.iter().map(|&d| aux_term(d)).sum();
                let loss = (id_part + lambda * aux_part) / denom;
                let aux_coef = aux_dsq
                    .iter()
                    .map(|&d| lambda * aux_term_slope(d) / denom)
                    .collect();
                (loss, vec![1.0 / denom; n_id], aux_coef)
            }
        };
        if !with_grad {
            return Ok((loss, None));
        }

        // Pass 2: gradients head by head.
        let beta = attn.beta;
        let mut grads = Vec::with_capacity(m);
        for (j, w) in params.heads().iter().enumerate() {
            let size = w.values().len();
            let mut grad = vec![0.0; size];
            let mut grad_mu = vec![0.0; size];
            let mut gh = vec![0.0; size];
            let mut ga = vec![0.0; size];
            let mut coef_dev_sum = 0.0;
            for (i, z) in id.iter().enumerate() {
                let st = id_stats[j][i];
                gh.iter_mut().for_each(|g| *g = 0.0);
                ga.iter_mut().for_each(|g| *g = 0.0);
                head_grads(z.values(), w, attn, st, &mut gh, &mut ga);
                let dev = st.value - mu[j];
                let c = 2.0 * id_coef[i] * dev;
                coef_dev_sum += c;
                let omega = (st.lse - batch_lse[j]).exp();
                for k in 0..size {
                    grad[k] += c * gh[k];
                    grad_mu[k] += omega * (gh[k] + beta * dev * ga[k]);
                }
            }
            for (k, z) in aux.iter().enumerate() {
                let st = aux_stats[j][k];
                let c = 2.0 * aux_coef[k] * (st.value - mu[j]);
                if c == 0.0 {
                    continue;
                }
                gh.iter_mut().for_each(|g| *g = 0.0);
                ga.iter_mut().for_each(|g| *g = 0.0);
                head_grads(z.values(), w, attn, st, &mut gh, &mut ga);
                coef_dev_sum += c;
                for (g, h) in grad.iter_mut().zip(&gh) {
                    *g += c * h;
                }
            }
            for (g, gm) in grad.iter_mut().zip(&grad_mu) {
                *g -= coef_dev_sum * gm;
            }
            if let ObjectiveKind::Unsupervised { norm_penalty: true } = self.kind {
                let norm = w.frobenius_sq();
                for (g, v) in grad.iter_mut().zip(w.values()) {
                    *g -= 2.0 * v / norm;
                }
            }
            grads.push(grad);
        }
        Ok((loss, Some(ParamGrad { heads: grads })))
    }
}

/// Unsupervised loss with the norm penalty on one batch.
pub fn loss_unsup(batch: &[&EmbeddingSequence], params: &ApoodParams, attention: Attention) -> Result<f64> {
    Objective::unsupervised(attention).loss(params, batch, &[])
}

/// Supervised loss; no norm penalty.
pub fn loss_sup(
    id_batch: &[&EmbeddingSequence],
    aux_batch: &[&EmbeddingSequence],
    params: &ApoodParams,
    attention: Attention,
    lambda_aux: f64,
) -> Result<f64> {
    Objective::supervised(attention, lambda_aux).loss(params, id_batch, aux_batch)
}

/// Gradient of [`loss_sup`] when `lambda_aux` is given, of [`loss_unsup`]
/// otherwise.
pub fn grad_loss(
    id_batch: &[&EmbeddingSequence],
    aux_batch: &[&EmbeddingSequence],
    params: &ApoodParams,
    attention: Attention,
    lambda_aux: Option<f64>,
) -> Result<ParamGrad> {
    let objective = match lambda_aux {
        Some(l) => Objective::supervised(attention, l),
        None => Objective::unsupervised(attention),
    };
    Ok(objective.loss_and_grad(params, id_batch, aux_batch)?.1)
}
