//! Crate-wide error type.
//!
//! Every fallible operation returns [`LabError`]. The CLI maps each error
//! family to a distinct process exit code (see [`LabError::exit_code`]) so
//! scripted callers can dispatch on failure kind without parsing messages.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid growth rate: {0}")]
    InvalidRate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no admissible index found within the search bound: {0}")]
    HorizonExceeded(String),

    #[error("shift would move time below zero: ell={ell}, n={n}")]
    NegativeTime { ell: i64, n: i64 },

    #[error("restriction to the kernel is numerically singular: {0}")]
    SingularRestriction(String),

    #[error("matrix is not a projection: |P^2 - P| = {residual:.3e}")]
    InvalidProjection { residual: f64 },

    #[error("no contracting envelope found on the exponent grid: {0}")]
    NoContraction(String),

    #[error("no spectral gap resolved at this horizon: {0}")]
    AmbiguousGap(String),

    #[error("growth hypothesis fails on sampled data: {0}")]
    HypothesisViolated(String),

    #[error("a dichotomy certificate is required: {0}")]
    CertificateRequired(String),

    #[error("tail majorant does not reach the requested tolerance: {0}")]
    TailNotConvergent(String),

    #[error("norm sandwich violated: {0}")]
    SandwichViolated(String),

    #[error("sup not stabilized at this horizon: {0}")]
    HorizonInsufficient(String),

    #[error("fixed-point iteration is not contracting: {0}")]
    NotContracting(String),

    #[error("fixed-point iteration exceeded {max_iter} iterations")]
    MaxIterExceeded { max_iter: usize },

    #[error("orbit class {key} was not seen when fitting")]
    MissingClass { key: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        LabError::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// Distinct exit code per error family, used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } => 2,
            LabError::InvalidRate(_) | LabError::Domain(_) => 3,
            LabError::HorizonExceeded(_) | LabError::HorizonInsufficient(_) => 4,
            LabError::NegativeTime { .. } => 5,
            LabError::SingularRestriction(_) | LabError::InvalidProjection { .. } => 6,
            LabError::NoContraction(_)
            | LabError::AmbiguousGap(_)
            | LabError::HypothesisViolated(_) => 7,
            LabError::TailNotConvergent(_) | LabError::CertificateRequired(_) => 8,
            LabError::SandwichViolated(_) => 9,
            LabError::NotContracting(_) | LabError::MaxIterExceeded { .. } => 10,
            LabError::MissingClass { .. } => 11,
            LabError::Io(_) => 12,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
