//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CalError>;

/// Errors raised by the calibration toolkit.
#[derive(Debug, Error)]
pub enum CalError {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix factorization or other numerical step failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A simulator run failed; carries the failing design-point index.
    #[error("simulator failed at point {index}: {message}")]
    Simulator { index: usize, message: String },

    /// Input data failed validation.
    #[error("invalid data: {0}")]
    Data(String),

    /// Configuration file problems (missing keys, bad types, bad values).
    #[error("invalid config: {0}")]
    Config(String),

    /// Filesystem or CSV I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CalError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CalError::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        CalError::Numerical(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        CalError::Data(msg.into())
    }
}
