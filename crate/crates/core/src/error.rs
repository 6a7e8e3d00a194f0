use alloc::string::String;
use core::fmt;

/// Failure modes surfaced by the simulation core.
///
/// `InvalidParameter` covers everything a validation pass can catch up
/// front (bad dimensions, out-of-range probabilities, mismatched lengths).
/// `Numeric` is reserved for runtime numerical breakdowns such as a
/// factorization failure or an iteration cap being exhausted.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter or input failed validation; the message names the field.
    InvalidParameter(String),
    /// A numerical procedure failed to converge or lost positive definiteness.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for building an `InvalidParameter` error.
pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
    Error::InvalidParameter(alloc::format!("{msg}"))
}

/// Shorthand for building a `Numeric` error.
pub(crate) fn numeric(msg: impl fmt::Display) -> Error {
    Error::Numeric(alloc::format!("{msg}"))
}
