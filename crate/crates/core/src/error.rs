use thiserror::Error;

/// Crate-wide error type. Numerical routines report what they achieved so
/// callers can decide whether a partial result is still useful.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature tolerance not met: requested {requested:.3e}, achieved {achieved:.3e} (partial value {partial:.6e})")]
    Quadrature {
        requested: f64,
        achieved: f64,
        partial: f64,
    },

    #[error("principal value ill-conditioned at {0}")]
    IllConditioned(String),

    #[error("resolution too coarse: {0}")]
    Resolution(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NotConverged {
        residual: f64,
        iterations: usize,
        tol: f64,
    },

    #[error("parameter search failed: {0}")]
    Search(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn search(msg: impl Into<String>) -> Self {
        Error::Search(msg.into())
    }
}
