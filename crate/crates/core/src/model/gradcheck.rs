use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::pooling::{Attention, Similarity};

use super::objective::{Objective, ObjectiveKind};
use super::ApoodParams;

/// Shape of the random instances drawn by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub dim: usize,
    pub heads: usize,
    pub queries: usize,
    pub beta: f64,
    pub similarity: Similarity,
    /// `Some(λ)` checks the supervised loss, with one AUX sequence per trial.
    pub lambda: Option<f64>,
    pub norm_penalty: bool,
    pub batch: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup {
            dim: 4,
            heads: 2,
            queries: 2,
            beta: 0.7,
            similarity: Similarity::Dot,
            lambda: None,
            norm_penalty: true,
            batch: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Worst error seen per head across trials.
    pub per_head_err: Vec<f64>,
    pub trials: usize,
}

const STEP: f64 = 1e-4;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-10)
}

/// Compares the analytic gradient against central differences with step
/// `1e-4` on `trials` random instances.
pub fn gradient_check(setup: &GradCheckSetup, trials: usize, seed: u64) -> Result<GradCheckReport> {
    if trials == 0 {
        return Err(Error::arg("trials must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attention = Attention {
        beta: setup.beta,
        similarity: setup.similarity,
    };
    let objective = Objective {
        attention,
        kind: match setup.lambda {
            Some(lambda) => ObjectiveKind::Supervised { lambda },
            None => ObjectiveKind::Unsupervised {
                norm_penalty: setup.norm_penalty,
            },
        },
    };
    let seq = |rng: &mut ChaCha8Rng, shift: f32| {
        let s = rng.gen_range(2..=5);
        EmbeddingSequence::new(
            setup.dim,
            (0..s * setup.dim).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect(),
        )
    };
    let mut per_head_err = vec![0.0f64; setup.heads];
    for _ in 0..trials {
        let id = (0..setup.batch).map(|_| seq(&mut rng, 0.0)).collect::<Result<Vec<_>>>()?;
        let aux = match setup.lambda {
            Some(_) => vec![seq(&mut rng, 0.5)?],
            None => Vec::new(),
        };
        let id_refs: Vec<&EmbeddingSequence> = id.iter().collect();
        let aux_refs: Vec<&EmbeddingSequence> = aux.iter().collect();
        let params = ApoodParams::random(setup.dim, setup.heads, setup.queries, 0.6, &mut rng)?;
        let (_, grad) = objective.loss_and_grad(&params, &id_refs, &aux_refs)?;
        let base = params.flatten();
        let per = setup.dim * setup.queries;
        for (j, analytic) in grad.heads.iter().enumerate() {
            let mut numeric = vec![0.0; per];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let at = |delta: f64| -> Result<f64> {
                    let mut p = params.clone();
                    let mut v = base.clone();
                    v[j * per + k] += delta;
                    p.assign(&v);
                    objective.loss(&p, &id_refs, &aux_refs)
                };
                *slot = (at(STEP)? - at(-STEP)?) / (2.0 * STEP);
            }
            per_head_err[j] = per_head_err[j].max(rel_err(analytic, &numeric));
        }
    }
    Ok(GradCheckReport {
        max_rel_err: per_head_err.iter().cloned().fold(0.0, f64::max),
        per_head_err,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_case_is_nearly_exact() {
        let setup = GradCheckSetup {
            dim: 3,
            heads: 1,
            queries: 1,
            beta: 0.0,
            ..Default::default()
        };
        let r = gradient_check(&setup, 5, 1).unwrap();
        assert!(r.max_rel_err <= 1e-6, "{r:?}");
    }

    #[test]
    fn default_instance_passes() {
        let r = gradient_check(&GradCheckSetup::default(), 5, 2).unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
        assert_eq!(r.per_head_err.len(), 2);
    }

    #[test]
    fn supervised_and_euclidean_pass() {
        for similarity in [Similarity::Dot, Similarity::Euclidean] {
            let setup = GradCheckSetup {
                lambda: Some(1.0),
                similarity,
                ..Default::default()
            };
            let r = gradient_check(&setup, 5, 3).unwrap();
            assert!(r.max_rel_err <= 1e-4, "{similarity:?} {r:?}");
        }
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(gradient_check(&GradCheckSetup::default(), 0, 0).is_err());
    }
}
