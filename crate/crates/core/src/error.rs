use thiserror::Error;

/// Errors raised by the sanitizers, estimators and statistics in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric parameter is out of its admissible range (non-positive scale,
    /// non-finite epsilon, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A structural contract was violated: mixed budget kinds, a doppelganger
    /// set with fewer than two points, an allocation that does not sum to one.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed (wrong length, non-finite coordinates, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation was called before the state it depends on was populated.
    #[error("invalid state: {0}")]
    State(String),

    /// The regression design matrix does not have full column rank.
    #[error("singular design matrix: {0}")]
    SingularDesign(String),
}

pub type Result<T> = std::result::Result<T, Error>;
