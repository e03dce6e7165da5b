use thiserror::Error;

/// Errors surfaced by model construction, likelihood evaluation, and sampling.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes of inputs are structurally inconsistent.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed or unusable input data.
    #[error("input error: {0}")]
    Input(String),

    /// A numerical failure that prevents continuing (non-finite posterior, etc.).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
