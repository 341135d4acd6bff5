use std::fs;
use std::path::{Path, PathBuf};

use apood::model::{Hyperparams, ScoreKind};
use apood::toy::ToyConfig;
use serde::{Deserialize, Serialize};

/// The single JSON config file. Every field is optional; flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hyperparams: Hyperparams,
    pub id_corpus: Option<PathBuf>,
    pub aux_corpus: Option<PathBuf>,
    pub ood_corpus: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub scores_out: Option<PathBuf>,
    /// `apood`, or one of the baseline names.
    pub method: Option<String>,
    pub score: ScoreKind,
    pub baseline: BaselineConfig,
    pub toy: ToyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub k: usize,
    pub out_dim: Option<usize>,
    pub eta: f64,
    pub lr: f64,
    pub steps: usize,
    pub weight_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            k: apood::baselines::DEFAULT_K,
            out_dim: None,
            eta: 1.0,
            lr: 0.01,
            steps: 1000,
            weight_decay: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> apood::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| apood::Error::Format(format!("{}: {e}", p.display()))),
        }
    }
}
