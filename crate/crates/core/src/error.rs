use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector ({what}): {reason}")]
    InvalidPmf { what: String, reason: String },

    #[error("hazard value H({index}) = {value} is outside [0, 1]")]
    InvalidHazard { index: usize, value: f64 },

    #[error("model failed validation:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("invalid UPM parameters: {0}")]
    InvalidUpm(String),

    #[error("observation dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("observation contains a non-finite value")]
    NonFiniteObservation,

    #[error("run length {run_length} is not below segment duration {duration}")]
    RunLengthOutOfRange { run_length: usize, duration: usize },

    #[error("{0} requires a duration-agnostic UPM")]
    DurationDependentUpm(&'static str),

    #[error("all hypotheses have zero likelihood at step {step}; posterior underflowed")]
    Underflow { step: usize },

    #[error("invalid segment labels: {0}")]
    InvalidLabels(String),

    #[error("fitting failed: {0}")]
    Fit(String),

    #[error("instance too large for exhaustive enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("feature extraction: {0}")]
    Features(String),

    #[error("invalid input: {0}")]
    Input(String),
}
