//! Error type shared by every module.
//!
//! Variants are grouped so the command-line front end can map them onto
//! exit codes: hypothesis violations exit with 2, numerical failures with 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("pole singularity: point is antipodal to the projection centre")]
    PoleSingularity,

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("quadrature did not reach tolerance {tolerance:e} (best estimate {estimate}, error {error:e})")]
    Precision {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },

    #[error("consistency check failed for {name}: {first} vs {second}")]
    Consistency {
        name: String,
        first: f64,
        second: f64,
    },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl LabError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) | LabError::Format(_) => 1,
            LabError::Domain(_) | LabError::PoleSingularity | LabError::Hypothesis(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
