//! Error type shared by every fallible operation in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by model construction, likelihood evaluation,
/// solvers and certification.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Dimensions of two inputs that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// An operation would exceed an explicit resource budget.
    #[error("{what} needs {required} {unit}, over the budget of {budget}")]
    ResourceLimit {
        what: String,
        required: u128,
        budget: u128,
        unit: &'static str,
    },

    /// Arithmetic produced a non-finite or otherwise unusable value.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Inputs that must describe the same dataset/model-set do not.
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    /// The certificate calibration is degenerate (upper bound does not
    /// exceed the random baseline), so no optimality ratio exists.
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    /// Reading or writing an artifact failed.
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact is malformed.
    #[error("malformed artifact: {0}")]
    Format(String),
}
