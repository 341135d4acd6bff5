//! First-order optimisers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent, no momentum.
    Sgd,
}

/// Learning rate at `step` (0-based) of a cosine decay from `base` to 0
/// over `total` steps, no warmup.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Optimizer {
            kind,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.t);
                let bc2 = 1.0 - BETA2.powi(self.t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.01, 0, 100), 0.01);
        assert!((cosine_lr(0.01, 50, 100) - 0.005).abs() < 1e-15);
        assert!(cosine_lr(0.01, 99, 100) > 0.0);
        assert!(cosine_lr(0.01, 99, 100) < 1e-5);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 2);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.002], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-4);
    }

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1);
        let mut p = [5.0];
        for step in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g, cosine_lr(0.1, step, 2000));
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1);
        let mut p = [2.0];
        opt.step(&mut p, &[4.0], 0.25);
        assert_eq!(p[0], 1.0);
    }
}
