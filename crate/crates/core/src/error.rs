//! Error type shared across the crate.

/// Errors produced by graph construction, problem validation, the
/// integrator, and the reference solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input: dimension mismatch, out-of-range parameter, and so on.
    #[error("invalid input: {0}")]
    Validation(String),

    /// The agent graph does not connect all agents.
    #[error("graph is not connected: {0}")]
    Disconnected(String),

    /// A matrix handed to the symmetric eigensolver was not symmetric.
    #[error("matrix is not symmetric: max |a_ij - a_ji| = {max_asymmetry:.3e}")]
    NotSymmetric { max_asymmetry: f64 },

    /// The Jacobi sweep cap was reached before the off-diagonal norm converged.
    #[error(
        "eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})"
    )]
    EigenNonConvergence { sweeps: usize, off_norm: f64 },

    /// A dense linear solve met a singular or numerically rank-deficient system.
    #[error("singular or rank-deficient system: {0}")]
    Singular(String),

    /// An iterative reference solver ran out of its iteration budget.
    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    /// The integrator produced a non-finite value.
    #[error("trajectory diverged at t = {t}: non-finite value in {component}")]
    Divergence { t: f64, component: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
