use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WarpError {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The input data cannot support the requested analysis.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// A numerical routine failed to converge or produced non-finite output.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl WarpError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        WarpError::InvalidArgument(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        WarpError::InsufficientData(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        WarpError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, WarpError>;
