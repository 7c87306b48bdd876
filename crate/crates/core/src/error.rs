use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A stepsize schedule violates one of the feasibility inequalities.
    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("iterates diverged at k = {k} (replication {replication}): F = {value:e} exceeds {threshold:e}")]
    Divergence {
        k: u64,
        replication: u64,
        value: f64,
        threshold: f64,
    },

    #[error("gamma function pole at argument {0}")]
    GammaPole(f64),

    #[error("problem does not expose its full objective")]
    ObjectiveUnavailable,

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("invalid experiment spec: field `{field}`: {reason}")]
    Spec { field: String, reason: String },

    #[error("dataset {path}: line {line}: {reason}")]
    Dataset {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
