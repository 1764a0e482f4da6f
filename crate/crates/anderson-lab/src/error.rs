//! Crate-wide error type.
//!
//! Numerical preconditions are hard errors here, never warnings: outside the
//! admissible parameter regions the fixed-point maps and resolvent bounds
//! guarantee nothing, so silent best-effort output would be unfalsifiable.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A function value was not finite at a quadrature node.
    #[error("non-finite integrand value at momentum ({0}, {1}, {2})")]
    NonFiniteIntegrand(f64, f64, f64),

    /// Energy outside the resolvent set / admissible window of a solver.
    #[error("inadmissible energy: {0}")]
    InadmissibleEnergy(String),

    /// Fixed-point iteration exceeded its iteration budget.
    #[error("fixed point did not converge in {max_iter} iterations (last residual {residual:.3e}); ratio history {ratios:?}")]
    NonConvergence {
        max_iter: usize,
        residual: f64,
        ratios: Vec<f64>,
    },

    /// A linear system was singular or too ill-conditioned to trust.
    #[error("ill-conditioned or singular system: {0}")]
    Conditioning(String),

    /// An operation was called on a potential variant that does not support it.
    #[error("unsupported potential variant: {0}")]
    UnsupportedVariant(String),

    /// A disorder sample is missing a coupling that the operation needs.
    #[error("incomplete disorder sample: missing coupling at site ({0}, {1}, {2})")]
    IncompleteSample(i64, i64, i64),

    /// Combinatorial guard exceeded (super-exponential growth).
    #[error("combinatorial guard exceeded: {0}")]
    GuardExceeded(String),

    /// Invalid argument or inconsistent dimensions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Iterative linear solver failed to reach its residual target.
    #[error("linear solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    SolverNonConvergence { residual: f64, iterations: usize },

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
