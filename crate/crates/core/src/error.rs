//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by construction and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OedError {
    /// Input shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A scalar or structural argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A functional does not have full row rank.
    #[error("rank deficient functional: {0}")]
    RankDeficient(String),
    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// The functional cannot be recovered from the design.
    #[error("functional not identifiable from design: {0}")]
    NotIdentifiable(String),
    /// A routine failed to produce a usable numerical answer.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A requested accuracy can never be reached.
    #[error("unattainable accuracy: {0}")]
    Unattainable(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, OedError>;
