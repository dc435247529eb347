use std::path::PathBuf;

use thiserror::Error;

/// Which half of a paired corpus an issue refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Text,
    Image,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Text => f.write_str("text"),
            Side::Image => f.write_str("image"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GapError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt corpus file: {0}")]
    Corruption(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in {side} matrix at row {row}")]
    NonFinite { side: Side, row: usize },

    #[error("degenerate (near-zero) vector at row {row}")]
    DegenerateVector { row: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("normal equations are singular; retry with ridge_lambda > 0")]
    Singular,

    #[error(
        "covariance is not positive definite after jitter {jitter}; retry with a larger jitter"
    )]
    NotPositiveDefinite { jitter: f64 },

    #[error("only {available} under-represented words remain, {requested} requested")]
    Exhausted { available: usize, requested: usize },

    #[error("malformed document: {0}")]
    Document(String),
}

impl GapError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GapError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment rather than by the inputs.
    pub fn is_environmental(&self) -> bool {
        matches!(self, GapError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, GapError>;
