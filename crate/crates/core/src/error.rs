use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix or coordinate singularity was hit.
    #[error("singular {0}")]
    Singular(&'static str),

    /// Cholesky factorization failed even after jitter escalation.
    #[error("{what} is not positive semi-definite (Cholesky failed after jitter)")]
    Decomposition { what: &'static str },

    /// A covariance that must be PSD has a materially negative eigenvalue.
    #[error(
        "conditioning failure in {what}: min eigenvalue {min_eigenvalue:.6e} below \
         -1e-9 * trace ({trace:.6e})"
    )]
    Conditioning {
        what: &'static str,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
