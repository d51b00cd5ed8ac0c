use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch for {what}: expected {expected:?}, got {actual:?}")]
    DimMismatch {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite value in {context} at iteration {iteration}")]
    NonFinite {
        context: &'static str,
        iteration: usize,
    },

    #[error("timestep {t} outside schedule range [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("raw payload {path:?} has {actual} bytes, header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("backward pass requested without a recorded forward pass")]
    NoForwardPass,

    #[error("bad header {path:?}: {msg}")]
    Header { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}
