use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum MeltError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("truncation point {truncation} too small: weight tail {tail:.3e} is not negligible against integrand scale {scale:.3e}")]
    TruncationTooSmall {
        truncation: f64,
        tail: f64,
        scale: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    #[error("ill-conditioned linear system: {0}")]
    IllConditioned(String),

    #[error("bisection bracket not found: {0}")]
    BracketNotFound(String),

    #[error("front collided with the outer boundary: lambda = {lambda}, outer radius = {outer}")]
    FrontCollision { lambda: f64, outer: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, MeltError>;
