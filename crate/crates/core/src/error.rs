use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("caption has no tokens after normalization")]
    EmptyCaption,

    #[error("token index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("attention over an empty sequence")]
    EmptySequence,

    #[error("batch of size {0} is too small, need at least 2")]
    BatchTooSmall(usize),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid distribution in row {row}: {detail}")]
    InvalidDistribution { row: usize, detail: String },

    #[error("image referenced by manifest does not exist: {0}")]
    MissingImage(PathBuf),

    #[error("malformed manifest line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },

    #[error("checkpoint config mismatch on `{key}`: checkpoint has {found}, expected {expected}")]
    ConfigMismatch {
        key: String,
        expected: String,
        found: String,
    },

    #[error("corrupt checkpoint {path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
