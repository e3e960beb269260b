use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Mean resultant length is numerically 1; the concentration was capped.
    #[error("degenerate resultant (r_bar = {r_bar}); kappa capped at {kappa}")]
    DegenerateResultant { r_bar: f64, kappa: f64 },

    #[error("near-uniform sample (r_bar = {r_bar}); kappa set to 0")]
    NearUniform { r_bar: f64 },

    #[error("kappa solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("state has vanishing responsibility mass ({mass:e})")]
    EmptyState { mass: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite log-likelihood")]
    NonFiniteLikelihood,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("message has no in-vocabulary tokens")]
    NoKnownTokens,

    #[error("embedding file not found: {0}")]
    MissingEmbeddingFile(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
