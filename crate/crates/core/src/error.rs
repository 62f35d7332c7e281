use thiserror::Error;

/// Errors raised by the numeric library.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes are inconsistent for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value violates a documented invariant.
    #[error("config error: {0}")]
    Config(String),

    /// Numeric failure (non-finite values, divergence, failed check).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// File format or filesystem failure.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
