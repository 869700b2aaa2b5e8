use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {constraint}")]
    Validation { constraint: String },
    #[error("range error: {0}")]
    Range(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("scale error: {0}")]
    Scale(String),
    #[error("backend mismatch: {0}")]
    Backend(String),
    #[error("indeterminate phase: probe vanishes on all sample points")]
    IndeterminatePhase,
    #[error("linear solve failed")]
    Solver,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(constraint: impl Into<String>) -> Result<T> {
    Err(Error::Validation { constraint: constraint.into() })
}
