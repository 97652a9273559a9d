//! Simulator and analysis library for adaptively synchronized distributed
//! primal-dual dynamics (ADPDD) on agent graphs.
//!
//! A network of agents minimizes a sum of local convex objectives under
//! consensus and local inequality constraints by following coupled
//! primal/dual/coupling-weight flows. The coupling weights grow with the
//! synchronization error between neighbors, which raises the algebraic
//! connectivity λ₂ of the graph Laplacian and with it the convergence
//! rate, at the price of a tighter disturbance-gain margin.
//!
//! Module map:
//! - [`graph`]: weighted agent graph, Laplacian/incidence structure, dense
//!   symmetric eigensolver.
//! - [`problem`]: quadratic objectives and constraints, problem validation.
//! - [`dynamics`]: the vector field and the gated fixed-step integrator.
//! - [`diagnostics`]: storage functions, passivity and Lyapunov checks,
//!   KKT residuals, adaptive-vs-frozen comparisons.
//! - [`robustness`]: disturbance injection and L₂-gain estimation.
//! - [`oracle`]: independent direct solvers used as ground truth.
//! - [`apps`]: builders for the shipped experiment families, including the
//!   distributed SVM extension.
//! - [`config`]: TOML-facing experiment configuration.

pub mod apps;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod robustness;

pub use config::{ExperimentConfig, ResolvedExperiment, ResolvedProblem};
pub use diagnostics::{
    check_lambda2_ordering, check_ratio_bound, compare_convergence, kkt_residual, storage_snapshot,
    verify_lyapunov_decrease, verify_passivity, CheckReport, ComparisonReport, KktResidual,
    SaddlePoint, StorageSnapshot, Subsystem, VerificationReport,
};
pub use dynamics::{
    primal_rhs, projection_plus, simulate, simulate_from, step, weight_rhs, Derivatives,
    PortTarget, Record, SimConfig, SimStatus, SystemState, Trajectory,
};
pub use error::{Error, Result};
pub use graph::{eig_symmetric, jacobi_eigen, Graph, SpectralSummary};
pub use oracle::{
    saddle_point, solve_consensus_unconstrained, solve_constrained, solve_least_squares,
};
pub use problem::{Constraint, ConstraintForm, ProblemSpec, QuadraticFunction};
pub use robustness::{
    estimate_gain, simulate_with_disturbance, DisturbanceSpec, DisturbedTrajectory, GainReport,
    SignalSpec,
};
