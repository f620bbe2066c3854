use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    /// Network/checkpoint/batch shapes disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a non-finite quantity; the string carries the
    /// diagnostic dump.
    #[error("training fault: {0}")]
    Fault(String),

    /// Checkpoint file is missing, truncated, or not a checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
