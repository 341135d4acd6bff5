//! Token-embedding sequences and the corpora that hold them.
//!
//! A sequence is stored token-major: token `s` occupies
//! `values[s * dim .. (s + 1) * dim]`. Values are kept as `f32` (the on-disk
//! type); every reduction elsewhere in the crate accumulates in `f64`.

mod codec;
mod sampler;

pub use codec::{
    decode_corpus, encode_corpus, load_corpus, read_sidecar, sidecar_path, write_corpus,
    write_sidecar, MAGIC,
};
pub use sampler::{BatchSampler, SamplingMode};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One sequence representation: `len` tokens of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingSequence {
    /// Builds a sequence from token-major values. `values.len()` must be a
    /// positive multiple of `dim` and every value must be finite.
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("sequence dimension must be at least 1"));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::arg(format!(
                "{} values do not form a whole number of {dim}-dimensional tokens",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite value at offset {pos}")));
        }
        Ok(EmbeddingSequence { dim, values })
    }

    /// Convenience constructor from a list of tokens.
    pub fn from_tokens<T: AsRef<[f32]>>(tokens: &[T]) -> Result<Self> {
        let dim = tokens
            .first()
            .map(|t| t.as_ref().len())
            .ok_or_else(|| Error::arg("a sequence needs at least one token"))?;
        let mut values = Vec::with_capacity(dim * tokens.len());
        for t in tokens {
            check_dim(dim, t.as_ref().len())?;
            values.extend_from_slice(t.as_ref());
        }
        Self::new(dim, values)
    }

    pub(crate) fn from_parts_unchecked(dim: usize, values: Vec<f32>) -> Self {
        debug_assert!(dim > 0 && !values.is_empty() && values.len() % dim == 0);
        EmbeddingSequence { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    /// Always false: a sequence holds at least one token.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn token(&self, s: usize) -> &[f32] {
        &self.values[s * self.dim..(s + 1) * self.dim]
    }

    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    /// Copies tokens `range` into a new sequence.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::arg(format!(
                "token range {range:?} is empty or exceeds length {}",
                self.len()
            )));
        }
        Ok(Self::from_parts_unchecked(
            self.dim,
            self.values[range.start * self.dim..range.end * self.dim].to_vec(),
        ))
    }

    /// Concatenates sequences along the token axis.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a EmbeddingSequence>) -> Result<Self> {
        let mut dim = None;
        let mut values = Vec::new();
        for p in parts {
            match dim {
                None => dim = Some(p.dim),
                Some(d) => check_dim(d, p.dim)?,
            }
            values.extend_from_slice(&p.values);
        }
        let dim = dim.ok_or_else(|| Error::arg("nothing to concatenate"))?;
        Ok(Self::from_parts_unchecked(dim, values))
    }
}

/// Role of a corpus in an experiment. Metadata only: it is not stored in the
/// binary format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Id,
    Aux,
    Ood,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Id => "ID",
            Label::Aux => "AUX",
            Label::Ood => "OOD",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(Label::Id),
            "aux" => Ok(Label::Aux),
            "ood" => Ok(Label::Ood),
            other => Err(Error::arg(format!("unknown label {other:?}"))),
        }
    }
}

/// An ordered collection of sequences sharing one embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dim: usize,
    sequences: Vec<EmbeddingSequence>,
    pub label: Label,
}

impl Corpus {
    pub fn new(dim: usize, label: Label) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("corpus dimension must be at least 1"));
        }
        Ok(Corpus {
            dim,
            sequences: Vec::new(),
            label,
        })
    }

    pub fn from_sequences(
        dim: usize,
        sequences: Vec<EmbeddingSequence>,
        label: Label,
    ) -> Result<Self> {
        let mut corpus = Corpus::new(dim, label)?;
        for seq in sequences {
            corpus.push(seq)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, seq: EmbeddingSequence) -> Result<()> {
        check_dim(self.dim, seq.dim())?;
        self.sequences.push(seq);
        Ok(())
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[EmbeddingSequence] {
        &self.sequences
    }

    pub fn get(&self, i: usize) -> Option<&EmbeddingSequence> {
        self.sequences.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingSequence> {
        self.sequences.iter()
    }

    /// Σ S_i over all sequences.
    pub fn total_tokens(&self) -> usize {
        self.sequences.iter().map(EmbeddingSequence::len).sum()
    }

    /// Keeps the sequences at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Corpus> {
        let mut sequences = Vec::with_capacity(indices.len());
        for &i in indices {
            let seq = self
                .sequences
                .get(i)
                .ok_or_else(|| Error::arg(format!("index {i} out of range {}", self.len())))?;
            sequences.push(seq.clone());
        }
        Ok(Corpus {
            dim: self.dim,
            sequences,
            label: self.label,
        })
    }

    /// Randomly partitions the corpus into two parts. The first part holds
    /// `floor(fraction * N)` sequences; both parts keep the original order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        let (first, second) = split_indices(self.len(), fraction, seed)?;
        Ok((self.select(&first)?, self.select(&second)?))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a EmbeddingSequence;
    type IntoIter = std::slice::Iter<'a, EmbeddingSequence>;

    fn into_iter(self) -> Self::IntoIter {
        self.sequences.iter()
    }
}

/// Index form of [`Corpus::split`].
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::arg("cannot split an empty corpus"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!("split fraction {fraction} outside (0, 1)")));
    }
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first = order[..k].to_vec();
    let mut second = order[k..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Corpus {
        let seqs = (0..n)
            .map(|i| EmbeddingSequence::new(1, vec![i as f32]).unwrap())
            .collect();
        Corpus::from_sequences(1, seqs, Label::Id).unwrap()
    }

    #[test]
    fn sequence_rejects_bad_shapes() {
        assert!(EmbeddingSequence::new(0, vec![1.0]).is_err());
        assert!(EmbeddingSequence::new(2, vec![]).is_err());
        assert!(EmbeddingSequence::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(EmbeddingSequence::new(1, vec![f32::NAN]).is_err());
        assert!(EmbeddingSequence::new(1, vec![f32::INFINITY]).is_err());
        let seq = EmbeddingSequence::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.token(1), &[3.0, 4.0]);
    }

    #[test]
    fn corpus_rejects_mixed_dims() {
        let mut c = Corpus::new(2, Label::Id).unwrap();
        let err = c.push(EmbeddingSequence::new(3, vec![0.0; 3]).unwrap());
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 2, found: 3 })));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (a, b) = corpus(10).split(0.5, 7).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a, b) = corpus(3).split(0.5, 7).unwrap();
        assert_eq!((a.len(), b.len()), (1, 2));
        let (a, _) = corpus(100).split(0.29, 1).unwrap();
        assert_eq!(a.len(), 29);
    }

    #[test]
    fn split_small_corpora_by_enumeration() {
        for n in 1..12 {
            for &f in &[0.1, 0.25, 0.5, 0.75, 0.9] {
                let (a, b) = split_indices(n, f, 3).unwrap();
                let expected = (0..=n).filter(|&k| (k as f64) <= f * n as f64).max().unwrap();
                assert_eq!(a.len(), expected, "n={n} f={f}");
                let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                assert!(a.windows(2).all(|w| w[0] < w[1]));
                assert!(b.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus(50);
        assert_eq!(c.split(0.3, 11).unwrap(), c.split(0.3, 11).unwrap());
        assert_ne!(c.split(0.3, 11).unwrap().0, c.split(0.3, 12).unwrap().0);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = corpus(4);
        for f in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(c.split(f, 0), Err(Error::Argument(_))));
        }
        assert!(Corpus::new(1, Label::Id).unwrap().split(0.5, 0).is_err());
    }
}
