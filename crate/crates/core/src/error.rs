//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resonance: {0}")]
    Resonance(String),

    #[error("straddling boundary: {0}")]
    StraddlingBoundary(String),

    #[error("ambiguous dressed-state labeling: {0}")]
    AmbiguousLabeling(String),

    #[error("integration failed at t = {t:.3e} s: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("bracketing failed: {0}")]
    Bracket(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, Error>;
