//! EMBSQ1 binary corpus format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   7 bytes  "EMBSQ1\0"
//! dim     u32
//! count   u64
//! count times:
//!     len     u32
//!     values  len * dim f32, token-major
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Corpus, EmbeddingSequence, Label};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"EMBSQ1\0";

const HEADER_LEN: usize = 7 + 4 + 8;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncation(format!(
                "{what} needs {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an EMBSQ1 byte buffer. The returned corpus is labelled
/// [`Label::Id`]; callers relabel as needed.
pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus> {
    let head = &bytes[..bytes.len().min(MAGIC.len())];
    if head != &MAGIC[..head.len()] {
        return Err(Error::format("missing EMBSQ1 magic"));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    r.take(MAGIC.len(), "magic")?;
    let dim = r.u32("dim")? as usize;
    let count = r.u64("sequence count")?;
    if dim == 0 {
        return Err(Error::format("dim must be at least 1"));
    }
    // Every sequence takes at least 4 + 4 * dim bytes; reject impossible
    // counts before allocating anything proportional to them.
    let min_seq_bytes = 4u64 + 4 * dim as u64;
    if count.saturating_mul(min_seq_bytes) > r.remaining() as u64 {
        return Err(Error::Truncation(format!(
            "{count} sequences of dim {dim} cannot fit in {} payload bytes",
            r.remaining()
        )));
    }
    let count = count as usize;

    let mut sequences = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u32("sequence length")? as usize;
        if len == 0 {
            return Err(Error::Data {
                sequence: i,
                reason: "zero-length sequence".into(),
            });
        }
        let n_values = len
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4).map(|b| (n, b)));
        let (n_values, n_bytes) = n_values
            .ok_or_else(|| Error::Truncation(format!("sequence {i} length overflows")))?;
        let raw = r.take(n_bytes, "sequence values")?;
        let mut values = Vec::with_capacity(n_values);
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Data {
                    sequence: i,
                    reason: format!("non-finite value at token {} component {}", k / dim, k % dim),
                });
            }
            values.push(v);
        }
        sequences.push(EmbeddingSequence::from_parts_unchecked(dim, values));
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!(
            "{} trailing bytes after the last sequence",
            r.remaining()
        )));
    }
    Ok(Corpus {
        dim,
        sequences,
        label: Label::Id,
    })
}

pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let payload: usize = corpus.iter().map(|s| 4 + 4 * s.values().len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(corpus.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(corpus.len() as u64).to_le_bytes());
    for seq in corpus {
        out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
        for v in seq.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    decode_corpus(&fs::read(path)?)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_corpus(corpus))?;
    w.flush()?;
    Ok(())
}

/// `data/train.embsq` -> `data/train.meta.json`.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("meta.json")
}

/// Reads the optional provenance sidecar next to a corpus file. The sidecar
/// is free-form and never influences how the corpus is decoded.
pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Option<serde_json::Value>> {
    let side = sidecar_path(path);
    match fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::format(format!("{}: {e}", side.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn write_sidecar(path: impl AsRef<Path>, meta: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::format(e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}
