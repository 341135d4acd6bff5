//! Detection metrics and the scores CSV / eval JSON formats.

mod csvio;

pub use csvio::{read_scores, read_scores_from, write_scores, write_scores_to, ScoreRow};

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub const DEFAULT_TPR: f64 = 0.95;

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::arg("both score lists must be non-empty"));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    Ok(())
}

/// Twice the Mann–Whitney U statistic of `id` over `ood`, from midranks.
/// Doubling keeps tied midranks integral, so the result is exact.
fn doubled_u(id: &[f64], ood: &[f64]) -> u128 {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i+j+2)/2
        let doubled_midrank = (i + j + 2) as u128;
        let in_id = all[i..=j].iter().filter(|x| x.1).count() as u128;
        rank_sum2 += doubled_midrank * in_id;
        i = j + 1;
    }
    let n = id.len() as u128;
    rank_sum2 - n * (n + 1)
}

/// `P(id > ood) + ½ P(id = ood)` by the rank-sum statistic.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(doubled_u(id_scores, ood_scores) as f64 / pairs as f64)
}

/// The same quantity by enumerating every pair.
pub fn auroc_pairwise(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let mut wins2: u128 = 0;
    for a in id_scores {
        for b in ood_scores {
            wins2 += match a.partial_cmp(b).expect("no NaN") {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(wins2 as f64 / pairs as f64)
}

/// Number of ID scores that must stay at or above the threshold.
fn required_id(level: f64, n: usize) -> usize {
    // the epsilon absorbs products like 0.95·100 landing a hair above 95
    let k = (level * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// `(fpr, γ)`. `γ` is the largest threshold that keeps at least `level` of
/// the ID scores at or above it, i.e. the `⌈level·n⌉`-th largest ID score;
/// `fpr` is the fraction of OOD scores `≥ γ`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], level: f64) -> Result<(f64, f64)> {
    check_scores(id_scores, ood_scores)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg("level must be in (0, 1)"));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let gamma = sorted[required_id(level, sorted.len()) - 1];
    let false_pos = ood_scores.iter().filter(|&&s| s >= gamma).count();
    Ok((false_pos as f64 / ood_scores.len() as f64, gamma))
}

/// ID iff `score ≥ threshold`.
pub fn classify(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Id
    } else {
        Label::Ood
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl EvalReport {
    pub fn compute(id_scores: &[f64], ood_scores: &[f64]) -> Result<Self> {
        let (fpr95, threshold) = fpr_at_tpr(id_scores, ood_scores, DEFAULT_TPR)?;
        Ok(EvalReport {
            auroc: auroc(id_scores, ood_scores)?,
            fpr95,
            threshold,
            n_id: id_scores.len(),
            n_ood: ood_scores.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serialises")
    }

    /// `AUROC 99.12  FPR95 3.40` in percent with two decimals.
    pub fn summary(&self) -> String {
        format!("AUROC {:.2}  FPR95 {:.2}", 100.0 * self.auroc, 100.0 * self.fpr95)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auroc_hand_cases() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0, 1.0, 3.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn rank_sum_equals_pairwise(
            id in proptest::collection::vec(0i32..20, 1..120),
            ood in proptest::collection::vec(0i32..20, 1..120),
        ) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let a = auroc(&id, &ood).unwrap();
            prop_assert_eq!(a, auroc_pairwise(&id, &ood).unwrap());
            prop_assert_eq!(a + auroc(&ood, &id).unwrap(), 1.0);
            let ex = |v: &[f64]| v.iter().map(|x| (x / 10.0).exp()).collect::<Vec<_>>();
            prop_assert_eq!(a, auroc(&ex(&id), &ex(&ood)).unwrap());
            let af = |v: &[f64]| v.iter().map(|x| 3.0 * x - 7.0).collect::<Vec<_>>();
            prop_assert_eq!(a, auroc(&af(&id), &af(&ood)).unwrap());
        }

        #[test]
        fn fpr_non_increasing_as_level_drops(
            id in proptest::collection::vec(-50i32..50, 1..80),
            ood in proptest::collection::vec(-50i32..50, 1..80),
        ) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let mut prev = f64::INFINITY;
            for level in [0.99, 0.95, 0.9, 0.75, 0.5, 0.1] {
                let (fpr, _) = fpr_at_tpr(&id, &ood, level).unwrap();
                prop_assert!(fpr <= prev);
                prev = fpr;
            }
        }
    }

    #[test]
    fn threshold_on_one_to_hundred() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        let (_, gamma) = fpr_at_tpr(&id, &[0.0], 0.95).unwrap();
        assert_eq!(gamma, 6.0);
        // exhaustive: the largest candidate keeping ≥ 95 ID scores at or above it
        let best = (0..=101)
            .map(f64::from)
            .filter(|g| id.iter().filter(|&&s| s >= *g).count() >= 95)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(gamma, best);
    }

    #[test]
    fn fpr_edge_cases() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        let below: Vec<f64> = (0..10).map(|i| -f64::from(i)).collect();
        assert_eq!(fpr_at_tpr(&id, &below, 0.95).unwrap().0, 0.0);
        let (fpr, _) = fpr_at_tpr(&id, &id, 0.95).unwrap();
        assert!((fpr - 0.95).abs() <= 1.0 / 100.0);
        assert!(fpr_at_tpr(&id, &id, 1.0).is_err());
        assert!(fpr_at_tpr(&id, &id, 0.0).is_err());
    }

    #[test]
    fn classify_uses_greater_or_equal() {
        assert_eq!(classify(1.0, 1.0), Label::Id);
        assert_eq!(classify(1.0 - 1e-12, 1.0), Label::Ood);
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let labels: Vec<Label> = grid.iter().map(|&g| classify(2.05, g)).collect();
        let flips = labels.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 1);
        assert_eq!(labels[0], Label::Id);
    }

    #[test]
    fn report_fields() {
        let r = EvalReport::compute(&[2.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_eq!((r.auroc, r.fpr95, r.n_id, r.n_ood), (1.0, 0.0, 2, 2));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["auroc", "fpr95", "threshold", "n_id", "n_ood"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(r.summary(), "AUROC 100.00  FPR95 0.00");
    }
}
