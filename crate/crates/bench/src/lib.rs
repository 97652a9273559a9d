//! Shared problem setups for the benchmarks.

use adpdd::apps::{build_distributed_lsq, build_example2, seeded_lsq_data, seeded_x0};
use adpdd::dynamics::{SimConfig, SystemState};
use adpdd::graph::Graph;
use adpdd::problem::ProblemSpec;
use nalgebra::DVector;

pub struct Setup {
    pub problem: ProblemSpec,
    pub graph: Graph,
    pub state: SystemState,
    pub cfg: SimConfig,
}

/// Ten scalar agents on the seeded random graph.
pub fn example2_setup() -> Setup {
    let (problem, graph, _) = build_example2(42);
    let x0 = seeded_x0(problem.dim(), 42, 1.0);
    let state = SystemState::cold_start(x0, problem.constraint_count(), &graph);
    let cfg = SimConfig {
        dt: 1e-4,
        t_end: 1.0,
        record_every: 100,
        ..Default::default()
    };
    Setup {
        problem,
        graph,
        state,
        cfg,
    }
}

/// Four agents holding 25x80 row blocks of a seeded least-squares system.
pub fn lsq_setup() -> Setup {
    let graph = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], 1.0, &[0.1; 4]).unwrap();
    let (a, b) = seeded_lsq_data(100, 80, 42);
    let problem = build_distributed_lsq(&a, &b, &graph, None).unwrap();
    let state = SystemState::cold_start(
        DVector::zeros(problem.dim()),
        problem.constraint_count(),
        &graph,
    );
    let cfg = SimConfig {
        dt: 2e-4,
        t_end: 1.0,
        record_every: 100,
        ..Default::default()
    };
    Setup {
        problem,
        graph,
        state,
        cfg,
    }
}
