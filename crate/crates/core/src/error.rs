use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented constraint.
    #[error("configuration error: {key}: {message}")]
    Config { key: String, message: String },

    /// The implicit solver did not reach tolerance.
    #[error("non-convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Too many tracer paths failed; the time step is likely too large.
    #[error("ensemble aborted: {failed} of {total} paths failed")]
    EnsembleAbort { failed: usize, total: usize },

    /// Post-processing cannot produce a meaningful estimate.
    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
