//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad counts, impossible hyperparameters, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed external data (WAV header, CSV schema, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Tensor/vector dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input too short for the requested windowing/framing.
    #[error("size error: {0}")]
    Size(String),

    /// Input that would produce meaningless output (constant clip etc.).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Join keys missing between tables that must align.
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// Metric cannot be computed (single-class cell etc.).
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// Non-finite values during optimization.
    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
