use thiserror::Error;

use crate::io::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index {index:?} out of bounds for shape {dims:?}")]
    IndexOutOfBounds { index: Vec<usize>, dims: Vec<usize> },

    #[error("index {0:?} appears more than once")]
    DuplicateIndex(Vec<usize>),

    #[error("non-finite value {value} at index {index:?}")]
    NonFinite { index: Vec<usize>, value: f64 },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("ensemble failed: {0}")]
    Ensemble(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
