use thiserror::Error;

/// Error classes shared by the whole library.
///
/// The CLI maps them onto exit codes: argument and dimension errors are usage
/// problems (exit 2), parse/version/frame/io errors are data problems
/// (exit 3), and numeric failures (exit 4) mean a linear-algebra operation
/// could not be carried out on otherwise well-formed input.
#[derive(Debug, Error)]
pub enum Error {
    /// An input had the wrong shape for the requested operation.
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violated a precondition (empty data, K > T, bad flag...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A rotation matrix failed the orthonormality or determinant check.
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    /// A numerical operation failed (non-positive-definite covariance,
    /// singular precision sum, diverging responsibilities).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed file content; the message names the offending field.
    #[error("parse error: {0}")]
    Parse(String),

    /// The file's version tag is not one this build understands.
    #[error("unsupported format version: found {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
