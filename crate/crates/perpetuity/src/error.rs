//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A coefficient evaluated to NaN/infinity at a probed state.
    #[error("non-finite {what} at state {point:?}")]
    NonFinite { what: String, point: Vec<f64> },

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix not positive definite: offending eigenvalue {eigenvalue:.6e} (threshold {threshold:.3e})")]
    NotPositiveDefinite { eigenvalue: f64, threshold: f64 },

    /// The factor diffusion has no normalizable invariant density.
    #[error("factor process is not positive recurrent: {0}")]
    NotPositiveRecurrent(String),

    /// An improper integral could not be classified as convergent or divergent.
    #[error("quadrature inconclusive: {0}")]
    Inconclusive(String),

    /// An eigenvalue requirement (e.g. strictly positive real parts) fails.
    #[error("spectrum requirement violated: {0}")]
    Spectrum(String),

    /// An iterative solver did not reach its tolerance.
    #[error("{what} failed to converge: residual {residual:.6e} after {iterations} iterations")]
    Convergence {
        what: String,
        residual: f64,
        iterations: usize,
    },

    /// A simulated state left the declared domain with reflection disabled.
    #[error("state left the domain at t = {time}: {point:?}")]
    DomainExit { time: f64, point: Vec<f64> },

    /// A coefficient is degenerate where non-degeneracy is required.
    #[error("degenerate coefficient: {0}")]
    Degenerate(String),

    /// A computed solution violates a structural requirement (bounds, monotonicity).
    #[error("validity check failed: {0}")]
    Validity(String),

    /// The density does not support direct sampling; use the forward-reversal method.
    #[error("sampling unsupported: {0}")]
    UnsupportedSampler(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
