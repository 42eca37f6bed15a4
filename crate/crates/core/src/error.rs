use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// A stage of a Runge-Kutta-Chebyshev recurrence produced a non-finite value.
    #[error("integration blew up at t = {time} (stage {stage})")]
    BlowUp { time: f64, stage: usize },

    #[error("spectral radius estimation failed: {0}")]
    EstimationFailed(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported case: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
