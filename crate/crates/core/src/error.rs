use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "matrix is not positive definite even with jitter {max_jitter:e} \
         (mean diagonal {mean_diag:e}); kernel hyperparameters may be ill-conditioned"
    )]
    Factorization { max_jitter: f64, mean_diag: f64 },

    #[error("{path}:{line}: {message}")]
    Data {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("model format: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True when the failure is numerical rather than caused by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Factorization { .. } | Error::Quadrature(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
