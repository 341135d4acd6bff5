//! Out-of-distribution detection on token-embedding sequences with
//! attention-pooled directional distances, plus the embedding-space
//! baselines and evaluation metrics used to compare against it.

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pooling;
pub mod selfcheck;
pub mod toy;

pub use corpus::{Corpus, EmbeddingSequence, Label};
pub use error::{Error, ErrorKind, Result};
pub use model::{ApoodModel, ApoodParams, Hyperparams, ScoreKind};
pub use pooling::{Attention, QueryBlock, Similarity};
