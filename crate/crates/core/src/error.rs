use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform (matmul inner dims, elementwise operands, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An API contract was violated (non-scalar backward target, missing grads, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed input data (corpus rows, schema files, config files).
    #[error("parse error: {0}")]
    Parse(String),
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Attribute schema violations (unknown labels, width mismatches).
    #[error("schema error: {0}")]
    Schema(String),
    /// A loss or gradient became non-finite during training.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// An evaluation oracle failed its reliability gate.
    #[error("{0}")]
    Gate(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
