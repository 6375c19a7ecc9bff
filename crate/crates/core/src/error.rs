use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("mask contains no set voxels")]
    EmptyRegion,

    #[error("malformed volume file: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("normalization failed: {0}")]
    Normalization(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no candidate region: mask became empty at step {step} ({name})")]
    NoCandidate { step: usize, name: &'static str },

    #[error("level-set evolution became unstable at iteration {iteration}")]
    Instability { iteration: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
