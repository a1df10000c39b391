use thiserror::Error;

/// Errors raised by the model, estimators and pricers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A computation produced a non-finite or otherwise unusable value.
    #[error("numerical fault: {0}")]
    Numerical(String),
    /// Malformed input data; carries the file and row when known.
    #[error("{file}:{row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },
    #[error("io error on {file}: {message}")]
    Io { file: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
