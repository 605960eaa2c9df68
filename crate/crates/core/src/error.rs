use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LdamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LdamError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("autodiff error: {0}")]
    Graph(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("dataset error at line {line}: {msg}")]
    Dataset { line: usize, msg: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {term} = {value}")]
    NonFinite { epoch: usize, batch: usize, term: &'static str, value: f64 },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LdamError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
