use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A frame vector was not future-directed timelike.
    #[error("frame error: {0}")]
    Frame(String),

    /// Momentum with p·p <= 0 where a massive particle is required.
    #[error("momentum off the mass shell: p·p = {0}")]
    OffShell(f64),

    /// A constructed object failed one of its declared invariants.
    #[error("invariant `{check}` violated: {detail}")]
    Invariant { check: &'static str, detail: String },

    #[error("invalid bath: {0}")]
    InvalidBath(String),

    #[error("invalid spectral density: {0}")]
    InvalidDensity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Estimated fit residual exceeded its bound.
    #[error("inconsistent result: {0}")]
    Inconsistency(String),

    #[error("unstable time step {dt:e}; stability bound suggests {suggested:e}")]
    Stability { dt: f64, suggested: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("step rejected: {0}")]
    StepRejected(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invariant(check: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            check,
            detail: detail.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
