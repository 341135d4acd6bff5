use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Walk a fresh permutation each epoch; the last batch of an epoch may be
    /// short.
    #[default]
    ShuffleEachEpoch,
    WithReplacement,
}

/// Deterministic mini-batch index stream over `0..n`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    mode: SamplingMode,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    /// `batch_size` larger than `n` is clamped to `n` (full-batch).
    pub fn new(n: usize, batch_size: usize, mode: SamplingMode, seed: u64) -> Result<Self> {
        Self::with_rng(n, batch_size, mode, ChaCha8Rng::seed_from_u64(seed))
    }

    pub(crate) fn with_rng(
        n: usize,
        batch_size: usize,
        mode: SamplingMode,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("cannot sample batches from an empty corpus"));
        }
        if batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        Ok(BatchSampler {
            n,
            batch_size: batch_size.min(n),
            mode,
            rng,
            order: (0..n).collect(),
            cursor: n,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        match self.mode {
            SamplingMode::WithReplacement => (0..self.batch_size)
                .map(|_| self.rng.gen_range(0..self.n))
                .collect(),
            SamplingMode::ShuffleEachEpoch => {
                if self.cursor >= self.n {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let end = (self.cursor + self.batch_size).min(self.n);
                let batch = self.order[self.cursor..end].to_vec();
                self.cursor = end;
                batch
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_equal_streams() {
        for mode in [SamplingMode::ShuffleEachEpoch, SamplingMode::WithReplacement] {
            let mut a = BatchSampler::new(37, 8, mode, 99).unwrap();
            let mut b = BatchSampler::new(37, 8, mode, 99).unwrap();
            // 10 epochs of 5 batches each
            for _ in 0..50 {
                assert_eq!(a.next_batch(), b.next_batch());
            }
        }
    }

    #[test]
    fn epochs_cover_every_index_once() {
        let mut s = BatchSampler::new(10, 4, SamplingMode::ShuffleEachEpoch, 1).unwrap();
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn oversized_batch_is_full_batch() {
        let mut s = BatchSampler::new(5, 100, SamplingMode::ShuffleEachEpoch, 1).unwrap();
        let mut b = s.next_batch();
        b.sort_unstable();
        assert_eq!(b, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_empty() {
        assert!(BatchSampler::new(0, 4, SamplingMode::default(), 0).is_err());
        assert!(BatchSampler::new(4, 0, SamplingMode::default(), 0).is_err());
    }
}
