use thiserror::Error;

/// Errors produced by the DPMF library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside the support required by an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Cholesky factorization failed even at the largest jitter.
    #[error("matrix is not positive definite (failed at jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) | Error::NotPositiveDefinite { .. } | Error::Sampler(_) => "numerics",
            Error::Index(_) | Error::Parse { .. } | Error::Validation(_) => "data",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
