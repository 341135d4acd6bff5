use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BatchSampler, Corpus, EmbeddingSequence};
use crate::error::{check_dim, Error, Result};
use crate::optim::{cosine_lr, Optimizer};

use super::objective::{Objective, ObjectiveKind};
use super::{ApoodModel, ApoodParams, Hyperparams};

// Independent generator streams, so that changing the number of heads or
// adding an AUX corpus does not shift the other draws.
const INIT_STREAM: u64 = 0;
const ID_STREAM: u64 = 1;
const AUX_STREAM: u64 = 2;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Trains from a seeded random initialisation and freezes the references
/// over the full ID corpus.
pub fn train(id: &Corpus, aux: Option<&Corpus>, hp: &Hyperparams) -> Result<ApoodModel> {
    Ok(train_with_log(id, aux, hp)?.0)
}

pub fn train_with_log(id: &Corpus, aux: Option<&Corpus>, hp: &Hyperparams) -> Result<(ApoodModel, TrainLog)> {
    hp.validate()?;
    let mut rng = stream(hp.seed, INIT_STREAM);
    let init = ApoodParams::random(
        id.dim(),
        hp.heads,
        hp.queries_per_head,
        hp.init_scale_for(id.dim()),
        &mut rng,
    )?;
    train_from(id, aux, hp, init)
}

/// Size of the AUX batch that keeps the per-batch class ratio near `N′/N`.
pub(crate) fn aux_batch_size(id_batch: usize, n_id: usize, n_aux: usize, batch_size: usize) -> usize {
    let raw = (id_batch as f64 * n_aux as f64 / n_id as f64).round() as usize;
    raw.clamp(1, batch_size.min(n_aux))
}

/// Trains starting from `init`; `hp.heads`, `hp.queries_per_head` and
/// `hp.init_scale` are ignored.
pub fn train_from(
    id: &Corpus,
    aux: Option<&Corpus>,
    hp: &Hyperparams,
    init: ApoodParams,
) -> Result<(ApoodModel, TrainLog)> {
    hp.validate()?;
    if id.is_empty() {
        return Err(Error::arg("the ID corpus is empty"));
    }
    check_dim(id.dim(), init.dim()).map_err(|e| Error::arg(e.to_string()))?;
    let aux = match aux {
        Some(a) if a.dim() != id.dim() => {
            return Err(Error::arg(format!(
                "AUX dimension {} does not match ID dimension {}",
                a.dim(),
                id.dim()
            )))
        }
        Some(a) if !a.is_empty() => Some(a),
        _ => None,
    };
    let attention = hp.attention();
    let objective = Objective {
        attention,
        kind: match aux {
            Some(_) => ObjectiveKind::Supervised { lambda: hp.lambda_aux },
            None => ObjectiveKind::Unsupervised { norm_penalty: hp.norm_penalty },
        },
    };

    let mut id_sampler = BatchSampler::with_rng(id.len(), hp.batch_size, hp.sampling, stream(hp.seed, ID_STREAM))?;
    let mut aux_sampler = match aux {
        Some(a) => {
            let b = aux_batch_size(id_sampler.batch_size(), id.len(), a.len(), hp.batch_size);
            Some(BatchSampler::with_rng(a.len(), b, hp.sampling, stream(hp.seed, AUX_STREAM))?)
        }
        None => None,
    };

    let mut params = init;
    let mut flat = params.flatten();
    let mut opt = Optimizer::new(hp.optimizer, flat.len());
    let mut log = TrainLog {
        losses: Vec::with_capacity(hp.steps),
    };
    for step in 0..hp.steps {
        let id_batch: Vec<&EmbeddingSequence> =
            id_sampler.next_batch().into_iter().map(|i| &id.sequences()[i]).collect();
        let aux_batch: Vec<&EmbeddingSequence> = match (&mut aux_sampler, aux) {
            (Some(s), Some(a)) => s.next_batch().into_iter().map(|i| &a.sequences()[i]).collect(),
            _ => Vec::new(),
        };
        let (loss, grad) = objective
            .loss_and_grad(&params, &id_batch, &aux_batch)
            .map_err(|e| match e {
                Error::DegenerateParams(reason) => Error::Divergence { step, reason },
                other => other,
            })?;
        let grad = grad.flatten();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: format!("non-finite loss {loss}"),
            });
        }
        log.losses.push(loss);
        opt.step(&mut flat, &grad, cosine_lr(hp.lr, step, hp.steps));
        params.assign(&flat);
    }

    let mut model = ApoodModel::new(params, attention)?;
    model.freeze(id)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::optim::OptimizerKind;
    use rand::Rng;

    fn corpus(seed: u64, n: usize, d: usize, shift: f32) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = (0..n)
            .map(|_| {
                let s = rng.gen_range(2..6);
                EmbeddingSequence::new(d, (0..s * d).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect())
                    .unwrap()
            })
            .collect();
        Corpus::from_sequences(d, seqs, Label::Id).unwrap()
    }

    fn small_hp() -> Hyperparams {
        Hyperparams {
            beta: 0.7,
            heads: 2,
            queries_per_head: 2,
            steps: 40,
            batch_size: 8,
            lr: 0.02,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let id = corpus(1, 30, 3, 0.0);
        let aux = corpus(2, 10, 3, 1.0);
        for a in [None, Some(&aux)] {
            let m1 = train(&id, a, &small_hp()).unwrap();
            let m2 = train(&id, a, &small_hp()).unwrap();
            assert_eq!(m1, m2);
        }
    }

    #[test]
    fn zero_steps_freezes_initialisation() {
        let id = corpus(1, 12, 3, 0.0);
        let hp = Hyperparams { steps: 0, ..small_hp() };
        let model = train(&id, None, &hp).unwrap();
        let init = ApoodParams::random(3, 2, 2, 1.0 / 3f64.sqrt(), &mut stream(hp.seed, INIT_STREAM)).unwrap();
        assert_eq!(model.params(), &init);
        assert!(model.is_frozen());
        for z in &id {
            assert!(model.score(z).unwrap().is_finite());
        }
    }

    #[test]
    fn unsupervised_loss_goes_down() {
        let id = corpus(3, 40, 4, 0.0);
        let hp = Hyperparams { steps: 200, batch_size: 40, ..small_hp() };
        let (_, log) = train_with_log(&id, None, &hp).unwrap();
        let first = log.losses[0];
        let last = *log.losses.last().unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let id = corpus(1, 5, 3, 0.0);
        let aux = corpus(1, 5, 4, 0.0);
        assert!(matches!(train(&id, Some(&aux), &small_hp()), Err(Error::Argument(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let id = corpus(4, 10, 2, 0.0);
        let hp = Hyperparams {
            optimizer: OptimizerKind::Sgd,
            lr: 1e300,
            steps: 10,
            ..small_hp()
        };
        match train(&id, None, &hp) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn aux_batch_tracks_class_ratio() {
        assert_eq!(aux_batch_size(512, 1000, 250, 512), 128);
        assert_eq!(aux_batch_size(512, 1000, 5000, 512), 512);
        assert_eq!(aux_batch_size(10, 1000, 1, 10), 1);
        assert_eq!(aux_batch_size(8, 8, 3, 8), 3);
    }
}
