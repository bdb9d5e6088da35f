//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dim(String),

    /// An API contract was violated (backward on a non-scalar, missing
    /// gradient, mismatched parameter sets, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A numeric failure: non-finite values, eigen-solver non-convergence.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration (unknown keys, out-of-range values).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed data file (bad magic, truncated payload, parse failure).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
