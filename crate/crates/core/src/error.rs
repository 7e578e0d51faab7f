use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch { expected: usize, actual: usize, context: &'static str },

    #[error("beacon is empty: summary statistics need at least one member")]
    EmptyBeacon,

    #[error("reference set is empty")]
    EmptyReference,

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("mechanism does not support this operation: {0}")]
    Unsupported(String),

    #[error("posterior weights underflowed for every membership vector")]
    PosteriorUnderflow,

    #[error("adjacency bound violated at SNV {snv}: |ΔM| = {gap} > {bound}")]
    AdjacencyBound { snv: usize, gap: f64, bound: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Diverged { epoch: usize, batch: usize, what: &'static str },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("utility target cannot be matched: {0}")]
    Unmatched(String),

    #[error("malformed file {path}: line {line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
