use thiserror::Error;

/// Errors raised by the estimators and their supporting machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must agree in size do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that has to be inverted is singular (or numerically so).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A configuration document is well-formed text but not a valid setup.
    #[error("config error: {0}")]
    Config(String),

    /// A data file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Refinement could not find enough spectral peaks to seed itself.
    #[error("too few peaks: found {found}, need {needed}")]
    TooFewPeaks { found: usize, needed: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
