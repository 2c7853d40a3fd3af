use std::path::PathBuf;

/// Result alias used across the engine.
pub type Result<T> = std::result::Result<T, EngineError>;

/// Errors raised by engine operations.
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    /// An input violated a documented operation contract (usually a shape mismatch).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced or received non-finite numbers.
    #[error("numeric fault: {0}")]
    Numeric(String),

    /// Configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint file is malformed, truncated, or has an unsupported version.
    #[error("checkpoint error in {path:?}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    /// Training-log file is missing records or malformed.
    #[error("log error: {0}")]
    Log(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    pub fn contract(msg: impl Into<String>) -> Self {
        EngineError::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        EngineError::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        EngineError::Config(msg.into())
    }
}

/// Checks that a slice has the expected length, with a labelled error.
pub fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(EngineError::Contract(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
