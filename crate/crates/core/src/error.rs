use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RqeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {what} has a non-positive entry at index {index} ({value})")]
    Domain { what: &'static str, index: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { what: String, iterations: usize, residual: f64 },

    #[error("unsupported oracle: {0}")]
    Unsupported(String),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, RqeError>;
