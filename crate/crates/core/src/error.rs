//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A declared schema does not match the data or violates its own invariants.
    #[error("schema error: {0}")]
    Schema(String),

    /// Invalid configuration value detected before any compute started.
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated an API contract (shape mismatch, malformed one-hot, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure during optimization (non-finite loss or activation).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A metric is undefined for the given inputs (e.g. single-class labels).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Malformed persisted artifact (bad magic, version, or checksum).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
