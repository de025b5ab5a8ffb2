use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GadError>;

#[derive(Debug, Error)]
pub enum GadError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("undefined ratio: {0}")]
    UndefinedRatio(&'static str),

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("truncated checkpoint blob: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("image format error in {path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GadError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GadError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GadError::InvalidArgument(msg.into())
    }
}
