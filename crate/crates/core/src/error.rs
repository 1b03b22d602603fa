//! Error type shared by all modules.

use alloc::string::String;

/// Errors surfaced by constructors, evaluators, and solvers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Error {
    /// Input data violates a documented invariant.
    Invalid(String),
    /// A query lies outside the object's domain.
    Domain(String),
    /// A density is not equivalent where equivalence is required.
    NotEquivalent(String),
    /// The instance exceeds a documented size bound.
    TooLarge(String),
    /// An iterative numeric routine failed.
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::NotEquivalent(msg) => write!(f, "density not equivalent: {msg}"),
            Error::TooLarge(msg) => write!(f, "instance too large: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
