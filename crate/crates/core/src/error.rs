//! Error type shared across the crate.
//!
//! Errors are split into two broad classes that map onto distinct process exit
//! codes in the CLI: *validation* errors (malformed input, contract violations,
//! out-of-range arguments) and *numerical* errors (degenerate sampling, failed
//! normalization, non-finite intermediate values).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input or violated precondition. CLI exit code 2.
    #[error("{0}")]
    Validation(String),

    /// Numerical failure at runtime (degenerate distribution, overflow,
    /// non-convergence treated as fatal). CLI exit code 3.
    #[error("{0}")]
    Numerical(String),

    /// Underlying I/O failure. Treated as a validation-class error (exit 2)
    /// since it almost always means a bad path argument.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Build a validation error from anything displayable.
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Build a numerical error from anything displayable.
    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI should terminate with for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}
