//! Binary logistic regression, ID (1) against AUX (0).

use super::BaselineHyperparams;
use crate::error::{check_dim, Error, Result};
use crate::optim::{cosine_lr, Optimizer};

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogitModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::arg("logit model needs at least one weight"));
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::arg("logit parameters must be finite"));
        }
        Ok(LogitModel { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `wᵀz̄ + b`.
    pub fn score(&self, zbar: &[f64]) -> Result<f64> {
        check_dim(self.dim(), zbar.len())?;
        Ok(self.weights.iter().zip(zbar).map(|(w, z)| w * z).sum::<f64>() + self.bias)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Full-batch cross-entropy from a zero start; weight decay on `w` only.
pub fn logit_train(id_means: &[Vec<f64>], aux_means: &[Vec<f64>], hp: &BaselineHyperparams) -> Result<LogitModel> {
    hp.validate()?;
    if id_means.is_empty() || aux_means.is_empty() {
        return Err(Error::arg("logistic regression needs both ID and AUX vectors"));
    }
    let dim = id_means[0].len();
    if dim == 0 {
        return Err(Error::arg("zero-dimensional features"));
    }
    for v in id_means.iter().chain(aux_means) {
        check_dim(dim, v.len())?;
    }
    let samples: Vec<(&[f64], f64)> = id_means
        .iter()
        .map(|v| (v.as_slice(), 1.0))
        .chain(aux_means.iter().map(|v| (v.as_slice(), 0.0)))
        .collect();
    let n = samples.len() as f64;
    // last slot is the bias
    let mut params = vec![0.0; dim + 1];
    let mut opt = Optimizer::new(hp.optimizer, dim + 1);
    let mut grad = vec![0.0; dim + 1];
    for step in 0..hp.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (x, y) in &samples {
            let logit: f64 = params[..dim].iter().zip(*x).map(|(w, v)| w * v).sum::<f64>() + params[dim];
            // −[y log σ + (1−y) log(1−σ)]
            loss += softplus(logit) - y * logit;
            let r = (sigmoid(logit) - y) / n;
            for (g, v) in grad[..dim].iter_mut().zip(*x) {
                *g += r * v;
            }
            grad[dim] += r;
        }
        loss /= n;
        for (g, w) in grad[..dim].iter_mut().zip(&params[..dim]) {
            *g += hp.weight_decay * w;
            loss += 0.5 * hp.weight_decay * w * w;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite logistic loss {loss}"),
            });
        }
        opt.step(&mut params, &grad, cosine_lr(hp.lr, step, hp.steps));
    }
    let bias = params.pop().expect("bias slot");
    LogitModel::new(params, bias)
}
