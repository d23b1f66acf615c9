use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state or density matrix failed one of its invariants.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    /// The requested integration step exceeds the allowed bound.
    #[error("time step {dt:.3e} s exceeds the allowed maximum {max:.3e} s")]
    StepTooLarge { dt: f64, max: f64 },

    /// An integration step produced a state that violates the density-matrix invariants.
    #[error("integration broke state invariants at t = {time:.6e} s: {reason}")]
    IntegrationInvariant { time: f64, reason: String },

    #[error("fit failed: {reason} (best so far: {best})")]
    Fit { reason: String, best: String },

    #[error("estimator model violated: {0}")]
    ModelViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Csv(_) | Error::Io(_))
    }
}
