use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("solver failed to converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no sign change of the action-value gap for state {state} within [{lo}, {hi}]: arm not indexable or degenerate")]
    NotBracketed { state: usize, lo: f64, hi: f64 },

    #[error("problem size {required} exceeds budget {budget}: {what}")]
    TooLarge {
        what: String,
        required: u128,
        budget: u128,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
