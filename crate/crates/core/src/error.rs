use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("feature {feature} has zero variance")]
    ZeroVariance { feature: usize },

    #[error("series of length {length} is shorter than window {window}")]
    TooShort { length: usize, window: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("partition bucket `{0}` is empty")]
    EmptyBucket(String),

    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: parse error at line {line}, column {column}: {message}")]
    CheckpointParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
