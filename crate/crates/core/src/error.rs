use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("gloss string contains no tokens")]
    EmptyGloss,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("cannot build an index over zero documents")]
    EmptyIndex,
    #[error("index {index} out of range for {len} documents")]
    Range { index: usize, len: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("decoder prefix of length {len} is at capacity {cap}")]
    Capacity { len: usize, cap: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("frame features are required unless the no_property ablation is active")]
    MissingFeatures,
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("invalid feature file: {0}")]
    FeatureFormat(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
