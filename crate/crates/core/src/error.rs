//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation. The field name is part of
    /// the message so CLI errors can point at the offending entry.
    #[error("invalid config: field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// Cholesky factorization hit a non-positive leading minor.
    #[error("covariance factorization failed: leading minor {minor} is not positive definite")]
    Factorization { minor: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Finite-sample calibration needs ceil(alpha * (n2 + 1)) <= n2.
    #[error(
        "calibration set too small: {actual} scores cannot support level {alpha} \
         in finite-sample mode; need at least {needed} calibration points"
    )]
    CalibrationTooSmall {
        needed: usize,
        actual: usize,
        alpha: f64,
    },

    #[error("cannot split {n} samples into two nonempty parts at fraction {fraction}")]
    SplitTooSmall { n: usize, fraction: f64 },

    #[error("query has dimension {actual}, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
