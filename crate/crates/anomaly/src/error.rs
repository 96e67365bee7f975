//! Error type shared by the detection routines.

use std::fmt;

/// Errors raised by constructors, transforms, and detectors.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a precondition.
    InvalidArgument(String),
    /// A robust scale estimate collapsed to zero for the named variate
    /// (1-based).
    DegenerateScale { variate: usize },
    /// A derived estimate (e.g. an autocorrelation) left its valid range.
    InvalidEstimate(String),
    /// Input data contained a non-finite value at the given 1-based
    /// (row, column) position.
    NonFiniteValue { row: usize, column: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateScale { variate } => {
                write!(f, "degenerate scale: variate {variate} has zero robust spread")
            }
            Error::InvalidEstimate(msg) => write!(f, "invalid estimate: {msg}"),
            Error::NonFiniteValue { row, column } => {
                write!(f, "non-finite value at row {row}, column {column}")
            }
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
