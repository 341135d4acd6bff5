//! Built-in identity suites, run by `apood selfcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{decompose_covariance, maha_fit, mean_pool, mean_pool_corpus, GaussianFit};
use crate::corpus::{Corpus, EmbeddingSequence, Label};
use crate::error::Result;
use crate::metrics::{auroc, auroc_pairwise, fpr_at_tpr};
use crate::model::{gradient_check, train_from, ApoodModel, ApoodParams, GradCheckSetup, Hyperparams};
use crate::optim::OptimizerKind;
use crate::pooling::{head_value, head_value_from_pooled_tokens, stream_head_value, Attention, QueryBlock, Similarity};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    /// Largest observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfcheckReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

impl SelfcheckReport {
    pub fn failures(&self) -> Vec<&'static str> {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect()
    }
}

fn suite(name: &'static str, errors: &[f64], tolerance: f64) -> SuiteResult {
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let passed = errors.iter().all(|e| e.is_finite() && *e <= tolerance);
    SuiteResult {
        name,
        passed,
        cases: errors.len(),
        worst,
        tolerance,
    }
}

fn random_seq(rng: &mut ChaCha8Rng, s: usize, d: usize, scale: f32) -> EmbeddingSequence {
    EmbeddingSequence::new(d, (0..s * d).map(|_| rng.gen_range(-scale..scale)).collect()).expect("valid sequence")
}

fn random_block(rng: &mut ChaCha8Rng, t: usize, d: usize) -> QueryBlock {
    QueryBlock::new(d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("nonzero block")
}

fn gradients(seed: u64) -> Result<SuiteResult> {
    let mut errors = Vec::new();
    let mut k = 0;
    for beta in [0.0, 0.25, 1.0, 2.0] {
        for heads in [1, 3] {
            for queries in [1, 2] {
                for lambda in [None, Some(0.1), Some(1.0), Some(10.0)] {
                    let setup = GradCheckSetup {
                        dim: 4,
                        heads,
                        queries,
                        beta,
                        lambda,
                        ..Default::default()
                    };
                    errors.push(gradient_check(&setup, 1, seed + k)?.max_rel_err);
                    k += 1;
                }
            }
        }
    }
    Ok(suite("gradient", &errors, 1e-4))
}

fn streaming(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::new();
    for case in 0..100 {
        let d = rng.gen_range(1..6);
        let total = rng.gen_range(1..40);
        let whole = random_seq(&mut rng, total, d, 2.0);
        let t = rng.gen_range(1..4);
        let w = random_block(&mut rng, t, d);
        let attn = Attention {
            beta: rng.gen_range(0.05..3.0),
            similarity: if case % 2 == 0 { Similarity::Dot } else { Similarity::Euclidean },
        };
        let chunk = if case % 4 == 0 { 1 } else { rng.gen_range(1..=total) };
        let mut chunks = Vec::new();
        let mut start = 0;
        while start < total {
            let end = (start + rng.gen_range(1..=chunk)).min(total);
            chunks.push(whole.slice(start..end)?);
            start = end;
        }
        let batch = head_value(&whole, &w, attn)?.value;
        let streamed = stream_head_value(chunks.iter(), &w, attn)?;
        errors.push((streamed - batch).abs() / (1.0 + batch.abs()));
    }
    Ok(suite("streaming", &errors, 1e-8))
}

fn dual_formulation(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let d = rng.gen_range(1..6);
        let (s, t) = (rng.gen_range(1..8), rng.gen_range(1..4));
        let z = random_seq(&mut rng, s, d, 1.5);
        let w = random_block(&mut rng, t, d);
        let attn = Attention::dot(rng.gen_range(0.0..3.0));
        let sim = head_value(&z, &w, attn)?.value;
        let tok = head_value_from_pooled_tokens(&z, &w, attn)?;
        errors.push((sim - tok).abs());
    }
    Ok(suite("dual-formulation", &errors, 1e-10))
}

fn random_spd_fit(rng: &mut ChaCha8Rng, d: usize) -> Result<GaussianFit> {
    let b: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>())
        + nalgebra::DMatrix::identity(d, d) * 0.05;
    let mean = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GaussianFit::from_moments(mean, cov)
}

fn decomposition(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::new();
    for i in 0..20 {
        let d = 2 + (i * 62) / 19;
        let fit = random_spd_fit(&mut rng, d)?;
        let dec = decompose_covariance(&fit)?;
        for _ in 0..100 {
            let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = fit.distance_sq(&z)?;
            errors.push((dec.distance_sq(&z)? - m).abs() / (1.0 + m));
        }
    }
    Ok(suite("mahalanobis-decomposition", &errors, 1e-6))
}

fn beta_zero_reduction(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, n, s) = (8, 50, 6);
    let seqs = (0..n).map(|_| random_seq(&mut rng, s, d, 1.0)).collect();
    let corpus = Corpus::from_sequences(d, seqs, Label::Id)?;
    let fit = maha_fit(&mean_pool_corpus(&corpus))?;
    let dec = decompose_covariance(&fit)?;
    let heads = dec
        .weights
        .iter()
        .map(|w| QueryBlock::new(d, w.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut model = ApoodModel::new(ApoodParams::new(heads)?, Attention::dot(0.0))?;
    model.freeze(&corpus)?;
    let mut errors = Vec::new();
    for z in &corpus {
        let maha = fit.distance_sq(&mean_pool(z))?;
        errors.push((model.distance_sq(z)?.total - maha).abs() / (1.0 + maha));
    }
    Ok(suite("beta-zero-reduction", &errors, 1e-6))
}

fn head_independence(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = (0..24)
        .map(|_| {
            let s = rng.gen_range(2..6);
            random_seq(&mut rng, s, 3, 1.0)
        })
        .collect();
    let corpus = Corpus::from_sequences(3, seqs, Label::Id)?;
    let two = ApoodParams::new(vec![random_block(&mut rng, 2, 3), random_block(&mut rng, 2, 3)])?;
    let one = ApoodParams::new(vec![two.heads()[0].clone()])?;
    let hp = Hyperparams {
        beta: 0.8,
        steps: 500,
        batch_size: 8,
        lr: 0.01,
        optimizer: OptimizerKind::Sgd,
        seed,
        ..Default::default()
    };
    let (m1, _) = train_from(&corpus, None, &hp, one)?;
    let (m2, _) = train_from(&corpus, None, &hp, two)?;
    let a = m1.params().heads()[0].values();
    let b = m2.params().heads()[0].values();
    let errors: Vec<f64> = a.iter().zip(b).map(|(x, y)| if x == y { 0.0 } else { 1.0 }).collect();
    Ok(suite("head-independence", &errors, 0.0))
}

fn metrics(seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::new();
    for _ in 0..100 {
        let levels = rng.gen_range(2..50);
        let (n_id, n_ood) = (rng.gen_range(1..150), rng.gen_range(1..150));
        let id: Vec<f64> = (0..n_id).map(|_| rng.gen_range(0..levels) as f64).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| rng.gen_range(0..levels) as f64).collect();
        errors.push((auroc(&id, &ood)? - auroc_pairwise(&id, &ood)?).abs());
    }
    let fixture: Vec<f64> = (1..=100).map(f64::from).collect();
    let (_, gamma) = fpr_at_tpr(&fixture, &[0.0], 0.95)?;
    errors.push((gamma - 6.0).abs());
    Ok(suite("metrics", &errors, 0.0))
}

/// Runs every suite; deterministic for a given seed.
pub fn run_selfcheck(seed: u64) -> Result<SelfcheckReport> {
    let suites = vec![
        gradients(seed)?,
        streaming(seed)?,
        dual_formulation(seed)?,
        decomposition(seed)?,
        beta_zero_reduction(seed)?,
        head_independence(seed)?,
        metrics(seed)?,
    ];
    Ok(SelfcheckReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
