use thiserror::Error;

/// Crate-wide error type. Contract violations are programming errors
/// surfaced as `Err` so callers can distinguish them from config issues.
#[derive(Debug, Error)]
pub enum SimError {
    /// An operation was called with arguments that violate its contract
    /// (wrong dimension, step after episode end, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value or combination of values is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A structured description file failed to parse or validate.
    #[error("description file error: {0}")]
    Description(String),

    /// Episode reset could not produce a valid scene.
    #[error("reset failed: {0}")]
    Reset(String),
}

impl SimError {
    pub fn contract(msg: impl Into<String>) -> Self {
        SimError::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }
    pub fn description(msg: impl Into<String>) -> Self {
        SimError::Description(msg.into())
    }
    pub fn reset(msg: impl Into<String>) -> Self {
        SimError::Reset(msg.into())
    }
}
