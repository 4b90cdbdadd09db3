use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {what} at node {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("value {value} at node {index} outside the admissible band [0, {upper}]")]
    OutOfBand {
        index: usize,
        value: f64,
        upper: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eps = {eps} is at or above the saturation threshold {eps_sat} for these moments")]
    AboveSaturation { eps: f64, eps_sat: f64 },

    #[error("numerical abort at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
