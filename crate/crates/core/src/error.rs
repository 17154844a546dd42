//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced while configuring, fitting or running the active-learning loop.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameters (distributions, budgets, costs, candidate sets).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition of an operation was violated by its input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The kernel matrix could not be factorized at any rung of the jitter ladder.
    #[error("kernel matrix not positive definite after jitter ladder {jitters:?}")]
    Conditioning { jitters: Vec<f64> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
