use thiserror::Error;

/// Errors produced anywhere in the simulation stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("truncation error: {0}")]
    Truncation(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (relative deviation {0:e})")]
    NotHermitian(f64),
    #[error("index error: {0}")]
    Index(String),
    #[error("integrator step size collapsed to {step:e} s at t = {time:e} s")]
    ToleranceFailure { time: f64, step: f64 },
    #[error("invalid bin width: {0}")]
    InvalidBinWidth(String),
    #[error("exponential fit diverged: {0}")]
    FitDiverged(String),
    #[error("fitted decay time is not positive ({0:e} s)")]
    NonPositiveTau(f64),
    #[error("condition selected no trials")]
    EmptySelection,
    #[error("IF channels {0} and {1} are closer than the minimum spacing")]
    ChannelCollision(String, String),
    #[error("invalid demodulation bin: {0}")]
    InvalidBin(String),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("every sweep point failed")]
    SweepFailed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
