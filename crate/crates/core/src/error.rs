use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("objective diverged at epoch {epoch}: {objective} (initial {initial})")]
    Diverged { epoch: usize, objective: f64, initial: f64 },

    #[error("worker failed: {0}")]
    WorkerFailed(String),

    #[error("not strongly convex: regularizer {0} must be positive")]
    NotStronglyConvex(f64),

    #[error(transparent)]
    Io(#[from] io::Error),
}
