//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any layer of the solver stack.
///
/// The CLI maps variants to exit codes: `Infeasible` -> 2,
/// `Numerical` -> 3, everything else -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// The problem (or a target return) has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A solver failed to certify a solution within its iteration budget.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
