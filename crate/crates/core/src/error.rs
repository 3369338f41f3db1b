use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Resource,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {var} out of range for a {dimension}-variable system")]
    DimensionMismatch { var: usize, dimension: usize },
    #[error("matrix is {rows}x{cols}, expected a square {expected}x{expected} matrix")]
    MatrixShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("term budget of {cap} exceeded at power {power} ({terms} terms)")]
    TermBudget {
        power: usize,
        terms: usize,
        cap: usize,
    },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("no density registered for variable {0}")]
    MissingDensity(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need {needed} mu coefficients, only {available} available")]
    InsufficientCoefficients { needed: usize, available: usize },
    #[error("no scaling estimate: every gamma coefficient vanishes")]
    NoEstimate,
    #[error("non-finite {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },
    #[error("ill-conditioned step at node {node} (pivot {pivot:e})")]
    IllConditioned { node: usize, pivot: f64 },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("rejection envelope acceptance {rate:.4} is below 1%")]
    EnvelopeTuning { rate: f64 },
    #[error("trajectory blew up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },
    #[error("mode count mismatch: {expected} expected, {found} found")]
    ModeMismatch { expected: usize, found: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::TermBudget { .. } => ErrorKind::Resource,
            Error::NoEstimate
            | Error::NonFinite { .. }
            | Error::IllConditioned { .. }
            | Error::InvalidCovariance(_)
            | Error::EnvelopeTuning { .. }
            | Error::BlowUp { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        }
    }
}
