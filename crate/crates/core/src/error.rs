//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with inputs that violate its contract
    /// (shape mismatches, non-distribution targets, inconsistent masks).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model or dataset degenerated into an unusable state
    /// (zero filters left in a layer, empty batch, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A non-finite value surfaced during computation.
    #[error("numeric fault: {0}")]
    Numeric(String),

    /// Dataset or checkpoint ingestion failed.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
