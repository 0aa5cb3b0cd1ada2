//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// Variants map onto the CLI exit codes: config errors exit 2, numeric
/// failures exit 3, IO failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands had incompatible shapes for `op`.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// An argument violated a precondition.
    #[error("invalid argument: {0}")]
    Validation(String),

    /// An API contract was violated (e.g. training a frozen module).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration file or CLI flag could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A numeric failure such as a NaN loss during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file did not match the expected binary or manifest layout.
    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
