use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("state space of {states} configurations exceeds the enumeration cap of {cap}")]
    Capacity { states: u128, cap: u128 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {block} at iteration {iteration}")]
    Numerical { block: String, iteration: usize },

    #[error("diverged at iteration {iteration}: gradient norm {norm:e} exceeds threshold")]
    Divergence {
        iteration: usize,
        norm: f64,
        /// Gradient norms of the iterations leading up to the failure.
        trace: Vec<f64>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
