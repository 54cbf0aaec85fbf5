use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch at {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("bad IDX magic 0x{found:08x} (expected 0x{expected:08x})")]
    Format { found: u32, expected: u32 },
    #[error("truncated input: needed {needed} bytes, found {found}")]
    Length { needed: usize, found: usize },
    #[error("inconsistent dataset: {0}")]
    Consistency(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(
    context: impl Into<String>,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::Dimension {
        context: context.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
