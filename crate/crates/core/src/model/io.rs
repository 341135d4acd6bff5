//! JSON model files.
//!
//! ```text
//! {"format": "apood-model-v1", "dim": D, "beta": β, "similarity": "dot",
//!  "heads": [[[w…] × T] × M], "mu": [μ × M], "log_norms": [… × M]}
//! ```
//!
//! `similarity` may be omitted and defaults to `"dot"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pooling::{Attention, QueryBlock, Similarity};

use super::{ApoodModel, ApoodParams};

pub const MODEL_FORMAT: &str = "apood-model-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    dim: usize,
    beta: f64,
    #[serde(default)]
    similarity: Similarity,
    heads: Vec<Vec<Vec<f64>>>,
    mu: Vec<f64>,
    log_norms: Vec<f64>,
}

impl ApoodModel {
    pub fn to_json(&self) -> Result<String> {
        let mu = self
            .mu()
            .ok_or_else(|| Error::State("only frozen models can be saved".into()))?;
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            dim: self.dim(),
            beta: self.beta(),
            similarity: self.attention().similarity,
            heads: self
                .params()
                .heads()
                .iter()
                .map(|h| h.queries().map(|q| q.to_vec()).collect())
                .collect(),
            mu: mu.to_vec(),
            log_norms: self.log_norms().to_vec(),
        };
        serde_json::to_string(&file).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::format(format!("unknown model format {:?}", file.format)));
        }
        let m = file.heads.len();
        if m == 0 {
            return Err(Error::format("model has no heads"));
        }
        if file.mu.len() != m || file.log_norms.len() != m {
            return Err(Error::format(format!(
                "{m} heads but {} references and {} log norms",
                file.mu.len(),
                file.log_norms.len()
            )));
        }
        let blocks = file
            .heads
            .iter()
            .map(|queries| {
                if queries.iter().any(|q| q.len() != file.dim) {
                    return Err(Error::format(format!("query length differs from dim {}", file.dim)));
                }
                if queries.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::format("non-finite query entry"));
                }
                QueryBlock::from_queries(queries).map_err(|e| Error::format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ApoodParams::new(blocks).map_err(|e| Error::format(e.to_string()))?;
        let attention = Attention {
            beta: file.beta,
            similarity: file.similarity,
        };
        let model = ApoodModel::with_references(params, attention, file.mu)
            .map_err(|e| Error::format(e.to_string()))?;
        for (stored, actual) in file.log_norms.iter().zip(model.log_norms()) {
            if (stored - actual).abs() > 1e-9 * actual.abs().max(1.0) {
                return Err(Error::format(format!(
                    "stored log norm {stored} does not match the heads ({actual})"
                )));
            }
        }
        Ok(model)
    }
}

/// Writes a frozen model.
pub fn save_model(model: &ApoodModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ApoodModel> {
    ApoodModel::from_json(&fs::read_to_string(path)?)
}
