use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("dimension mismatch: expected d={expected}, found d={found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("{level} is not an achieved eigenvalue level")]
    NotALevel { level: f64 },
    #[error("blow-up detected at t={time} (last valid state at t={last_valid_time})")]
    BlowUp { time: f64, last_valid_time: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("ensemble member {member}: {source}")]
    Ensemble {
        member: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("configuration invalid: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (blow-up, non-convergence) as opposed
    /// to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::BlowUp { .. } | Error::NoConvergence { .. } => true,
            Error::Ensemble { source, .. } | Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// True for rejected input: configuration, parameters and levels.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::NotALevel { .. } => true,
            Error::Ensemble { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
