//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulation and learning modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed; carries the offending line when known.
    #[error("format error in {path} at line {line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    /// Input data violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A function argument is outside its documented domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// An operation was called in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// A numerical routine failed (singular matrix, non-convergence, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training produced a non-finite quantity; carries diagnostics.
    #[error("training error: {0}")]
    Training(String),

    /// An environment fault inside a parallel training worker.
    #[error("worker {worker} environment fault: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
