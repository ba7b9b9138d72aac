//! Shared error type for the library.
//!
//! Contract violations (bad indices, malformed inputs) and numeric failures
//! are reported through [`Error`]; legitimate solver outcomes such as an
//! infeasible linear program are modelled as values, not errors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A requested table would exceed the per-table entry budget.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// An index lies outside the dimensions of the object it addresses.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The simplex solver gave up (pivot budget exhausted or numeric stall).
    #[error("lp solver failure: {0}")]
    Solver(String),

    /// A condition that valid inputs cannot produce; indicates a bug.
    #[error("internal consistency violation: {0}")]
    Internal(String),

    /// A structured text document could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}
