//! Problem builders for the shipped experiment families: distributed least
//! squares, box-constrained least squares in quadratic form, two academic
//! multi-agent problems, and the distributed soft-margin SVM.

pub mod svm;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{Constraint, ProblemSpec, QuadraticFunction};
use crate::rng::substream;

pub use svm::{
    accuracy, build_svm, parse_samples, partition_explicit, partition_round_robin, svm_rhs,
    svm_simulate, SvmBundle, SvmData, SvmDerivatives, SvmState, SvmTrajectory,
};

/// Split the rows of `A`/`b` across the agents of `g` and return the
/// distributed least-squares problem with per-agent objective
/// `f_i(z) = ½‖A_i z - b_i‖²`.
///
/// Rows split evenly by default; `row_counts` allows an uneven split.
/// Per-agent blocks `A_iᵀA_i` are typically rank-deficient, so the relaxed
/// construction path is used; the aggregate `AᵀA` must be positive definite.
pub fn build_distributed_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &Graph,
    row_counts: Option<&[usize]>,
) -> Result<ProblemSpec> {
    let n = g.n();
    let r1 = a.nrows();
    if b.len() != r1 {
        return Err(Error::validation(format!(
            "A has {r1} rows but b has {} entries",
            b.len()
        )));
    }
    let counts: Vec<usize> = match row_counts {
        Some(c) => {
            if c.len() != n {
                return Err(Error::validation(format!(
                    "row_counts has {} entries for {} agents",
                    c.len(),
                    n
                )));
            }
            if c.iter().sum::<usize>() != r1 {
                return Err(Error::validation(format!(
                    "row_counts sums to {}, expected {}",
                    c.iter().sum::<usize>(),
                    r1
                )));
            }
            c.to_vec()
        }
        None => {
            if r1 % n != 0 {
                return Err(Error::validation(format!(
                    "{r1} rows do not split evenly across {n} agents; pass row_counts"
                )));
            }
            vec![r1 / n; n]
        }
    };

    let mut objectives = Vec::with_capacity(n);
    let mut row = 0;
    for &cnt in &counts {
        let ai = a.rows(row, cnt).clone_owned();
        let bi = b.rows(row, cnt).clone_owned();
        let p = ai.transpose() * &ai;
        let r = -(ai.transpose() * &bi);
        let s = 0.5 * bi.norm_squared();
        objectives.push(QuadraticFunction::new(p, r, s)?);
        row += cnt;
    }
    ProblemSpec::new_with_psd_blocks(objectives, vec![])
}

/// Distributed least squares with a per-component box written as one
/// quadratic inequality per component and agent:
/// `(x_k - x̄_k)² ≤ ρ_k²` with `x̄ = (x_lo + x_hi)/2`, `ρ = (x_hi - x_lo)/2`.
pub fn build_box_constrained_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x_lo: &DVector<f64>,
    x_hi: &DVector<f64>,
    g: &Graph,
    row_counts: Option<&[usize]>,
) -> Result<ProblemSpec> {
    let l = a.ncols();
    if x_lo.len() != l || x_hi.len() != l {
        return Err(Error::validation(format!(
            "box bounds must have dimension {l}, got {} / {}",
            x_lo.len(),
            x_hi.len()
        )));
    }
    for k in 0..l {
        if !(x_lo[k] < x_hi[k]) {
            return Err(Error::validation(format!(
                "empty box in component {k}: [{}, {}]",
                x_lo[k], x_hi[k]
            )));
        }
    }
    let unconstrained = build_distributed_lsq(a, b, g, row_counts)?;
    let mut constraints = Vec::with_capacity(g.n() * l);
    for agent in 0..g.n() {
        for k in 0..l {
            let mid = 0.5 * (x_lo[k] + x_hi[k]);
            let rho = 0.5 * (x_hi[k] - x_lo[k]);
            // (x - mid)² - ρ² = x² - 2·mid·x + mid² - ρ²
            constraints.push(Constraint::scalar(
                agent,
                k,
                1.0,
                -2.0 * mid,
                mid * mid - rho * rho,
            ));
        }
    }
    ProblemSpec::new_with_psd_blocks(unconstrained.objectives().to_vec(), constraints)
}

/// Three agents on a path, two components each, quadratic objectives with
/// one elliptical inequality constraint per agent.
///
/// The constraints couple both components of an agent's state, so they are
/// kept as agent-local vector constraints rather than scalar-component
/// ones. Topology defaults to the path 1–2–3 (degrees 1, 2, 1).
pub fn build_example1() -> (ProblemSpec, Graph) {
    // f₁ = (z₁-z₂)² + (z₁-1)²
    let f1 = QuadraticFunction::new(
        DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 2.0]),
        DVector::from_row_slice(&[-2.0, 0.0]),
        1.0,
    )
    .expect("static coefficients");
    // f₂ = ⅓(z₁-z₂)² + (z₁-3)²
    let f2 = QuadraticFunction::new(
        DMatrix::from_row_slice(2, 2, &[8.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 2.0 / 3.0]),
        DVector::from_row_slice(&[-6.0, 0.0]),
        9.0,
    )
    .expect("static coefficients");
    // f₃ = ⅓(z₁-z₂)² + (z₁-6)²
    let f3 = QuadraticFunction::new(
        DMatrix::from_row_slice(2, 2, &[8.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 2.0 / 3.0]),
        DVector::from_row_slice(&[-12.0, 0.0]),
        36.0,
    )
    .expect("static coefficients");

    let ellipse = |pxx: f64, pyy: f64, s: f64| {
        QuadraticFunction::new(
            DMatrix::from_row_slice(2, 2, &[2.0 * pxx, 0.0, 0.0, 2.0 * pyy]),
            DVector::zeros(2),
            s,
        )
        .expect("static coefficients")
    };
    let constraints = vec![
        // g₁ = 6z₁² + 3z₂² - 11
        Constraint::vector(0, ellipse(6.0, 3.0, -11.0)),
        // g₂ = 7z₁² + 11z₂² - 7
        Constraint::vector(1, ellipse(7.0, 11.0, -7.0)),
        // g₃ = 2z₁² + 9z₂² - 20
        Constraint::vector(2, ellipse(2.0, 9.0, -20.0)),
    ];
    let p = ProblemSpec::new(vec![f1, f2, f3], constraints).expect("static problem is valid");
    let g = Graph::new(3, &[(0, 1), (1, 2)], 1.0, &[1.0, 1.0]).expect("path graph is valid");
    (p, g)
}

/// The diagonal Hessian entries of the ten-agent academic example.
pub const EXAMPLE2_HESSIAN: [f64; 10] = [
    136.0, 439.0, 355.0, 298.0, 302.0, 350.0, 327.0, 398.0, 353.0, 294.0,
];

/// Default adaptive gain for the ten-agent example.
pub const EXAMPLE2_DEFAULT_GAIN: f64 = 0.001;

/// Ten scalar agents with the fixed diagonal Hessian, linear terms drawn
/// from a seeded uniform `[0, 10]`, on a seeded random connected graph.
///
/// Returns the problem, the graph (gains default to
/// [`EXAMPLE2_DEFAULT_GAIN`]), and the drawn per-agent centers.
pub fn build_example2(seed: u64) -> (ProblemSpec, Graph, Vec<f64>) {
    let mut c_rng = substream(seed, "example2-c");
    let centers: Vec<f64> = (0..EXAMPLE2_HESSIAN.len())
        .map(|_| c_rng.random_range(0.0..10.0))
        .collect();
    let objectives: Vec<QuadraticFunction> = EXAMPLE2_HESSIAN
        .iter()
        .zip(&centers)
        .map(|(&h, &c)| {
            QuadraticFunction::new(
                DMatrix::from_element(1, 1, h),
                DVector::from_element(1, -h * c),
                0.5 * h * c * c,
            )
            .expect("static coefficients")
        })
        .collect();
    let p = ProblemSpec::new(objectives, vec![]).expect("diagonal Hessian is positive");

    let n = EXAMPLE2_HESSIAN.len();
    let mut g_rng = substream(seed, "example2-graph");
    // random spanning tree keeps it connected, then sprinkle extra edges
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (g_rng.random_range(0..i), i)).collect();
    for i in 0..n {
        for q in (i + 1)..n {
            if !edges.contains(&(i, q)) && g_rng.random_range(0.0..1.0) < 0.15 {
                edges.push((i, q));
            }
        }
    }
    let gains = vec![EXAMPLE2_DEFAULT_GAIN; edges.len()];
    let g = Graph::new(n, &edges, 1.0, &gains).expect("spanning tree is connected");
    (p, g, centers)
}

/// Seeded standard-normal initial primal state.
pub fn seeded_x0(dim: usize, seed: u64, scale: f64) -> DVector<f64> {
    let mut rng = substream(seed, "x0");
    let normal = rand_distr::StandardNormal;
    DVector::from_fn(dim, |_, _| {
        let v: f64 = rng.sample(normal);
        scale * v
    })
}

/// Seeded random tall matrix and right-hand side for least-squares runs.
pub fn seeded_lsq_data(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = substream(seed, "lsq-data");
    let normal = rand_distr::StandardNormal;
    let a = DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(normal);
        v
    });
    let b = DVector::from_fn(rows, |_, _| {
        let v: f64 = rng.sample(normal);
        v
    });
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, SimConfig};
    use crate::oracle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lsq_single_partition_equals_centralized() {
        // n = 1 is not a valid graph, so the smallest case is two agents
        // with the identity system; the aggregated problem must reproduce
        // the centralized normal equations.
        let g = Graph::new(2, &[(0, 1)], 1.0, &[1.0]).unwrap();
        let (a, b) = seeded_lsq_data(8, 3, 2);
        let p = build_distributed_lsq(&a, &b, &g, None).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.l(), 3);
        let z = oracle::solve_consensus_unconstrained(&p).unwrap();
        let direct = oracle::solve_least_squares(&a, &b).unwrap();
        assert!((z - direct).norm() < 1e-10);
    }

    #[test]
    fn lsq_identity_partition_has_rank_one_blocks() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], 1.0, &[1.0; 4]).unwrap();
        let a = DMatrix::identity(4, 4);
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let p = build_distributed_lsq(&a, &b, &g, None).unwrap();
        // per-agent Hessian is rank-1 PSD; mu collapses to zero
        assert!(p.mu().abs() < 1e-12);
        let z = oracle::solve_consensus_unconstrained(&p).unwrap();
        assert!((z - b).norm() < 1e-10);
    }

    #[test]
    fn lsq_uneven_split() {
        let g = Graph::new(2, &[(0, 1)], 1.0, &[1.0]).unwrap();
        let (a, b) = seeded_lsq_data(7, 2, 3);
        assert!(build_distributed_lsq(&a, &b, &g, None).is_err());
        let p = build_distributed_lsq(&a, &b, &g, Some(&[3, 4])).unwrap();
        let z = oracle::solve_consensus_unconstrained(&p).unwrap();
        let direct = oracle::solve_least_squares(&a, &b).unwrap();
        assert!((z - direct).norm() < 1e-10);
    }

    #[test]
    fn box_constraint_unit_box_is_unit_quadratic() {
        let g = Graph::new(2, &[(0, 1)], 1.0, &[1.0]).unwrap();
        let (a, b) = seeded_lsq_data(4, 2, 4);
        let lo = DVector::from_row_slice(&[-1.0, -1.0]);
        let hi = DVector::from_row_slice(&[1.0, 1.0]);
        let p = build_box_constrained_lsq(&a, &b, &lo, &hi, &g, None).unwrap();
        // g(x) = x² - 1 per component per agent
        assert_eq!(p.constraint_count(), 4);
        let evals = p
            .constraint_eval(&DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(evals[0].value, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(evals[1].value, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_box_rejected() {
        let g = Graph::new(2, &[(0, 1)], 1.0, &[1.0]).unwrap();
        let (a, b) = seeded_lsq_data(4, 2, 4);
        let lo = DVector::from_row_slice(&[1.0, -1.0]);
        let hi = DVector::from_row_slice(&[1.0, 1.0]);
        assert!(build_box_constrained_lsq(&a, &b, &lo, &hi, &g, None).is_err());
    }

    #[test]
    fn box_inactive_when_optimum_inside() {
        let g = Graph::new(2, &[(0, 1)], 1.0, &[1.0]).unwrap();
        let (a, b) = seeded_lsq_data(8, 2, 5);
        let unconstrained = oracle::solve_least_squares(&a, &b).unwrap();
        let margin = DVector::from_element(2, 2.0 + unconstrained.amax());
        let lo = &unconstrained - &margin;
        let hi = &unconstrained + &margin;
        let p = build_box_constrained_lsq(&a, &b, &lo, &hi, &g, None).unwrap();
        let sol = oracle::solve_constrained(&p).unwrap();
        assert!((sol.z - unconstrained).norm() < 1e-8);
        assert!(sol.theta.amax() < 1e-12);
    }

    #[test]
    fn example1_encodes_the_stated_functions() {
        let (p, g) = build_example1();
        assert_eq!(p.n(), 3);
        assert_eq!(p.l(), 2);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        // f₂(1, 1) = ⅓·0 + (1-3)² = 4
        let x = DVector::from_row_slice(&[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let f2_val = p.objectives()[1].value(x.rows(2, 2));
        assert_abs_diff_eq!(f2_val, 4.0, epsilon = 1e-12);
        // g₂(1, 1) = 7 + 11 - 7 = 11
        let evals = p.constraint_eval(&x).unwrap();
        assert_abs_diff_eq!(evals[1].value, 11.0, epsilon = 1e-12);
        // path Laplacian has λ₂ = 1
        let spec = crate::graph::eig_symmetric(&g.laplacian_n()).unwrap();
        assert_abs_diff_eq!(spec.lambda2(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn example1_unconstrained_consensus_matches_hand_solution() {
        let (p, _) = build_example1();
        let unconstrained = ProblemSpec::new(p.objectives().to_vec(), vec![]).unwrap();
        let z = oracle::solve_consensus_unconstrained(&unconstrained).unwrap();
        // ∂/∂z₁ = (10/3)(z₁-z₂) + 2(3z₁-10) = 0, ∂/∂z₂ = -(10/3)(z₁-z₂) = 0
        assert_abs_diff_eq!(z[0], 10.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(z[1], 10.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn example2_matches_stated_hessian_and_is_reproducible() {
        let (p, g, c) = build_example2(42);
        assert_eq!(p.n(), 10);
        for (i, &h) in EXAMPLE2_HESSIAN.iter().enumerate() {
            assert_eq!(p.objectives()[i].hessian()[(0, 0)], h);
        }
        for &ci in &c {
            assert!((0.0..10.0).contains(&ci));
        }
        let (p2, g2, c2) = build_example2(42);
        assert_eq!(c, c2);
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(p.objectives()[3].linear(), p2.objectives()[3].linear());
        let (_, g3, c3) = build_example2(43);
        assert!(c != c3 || g.edges() != g3.edges());
    }

    #[test]
    fn example2_oracle_is_weighted_mean() {
        let (p, _, c) = build_example2(7);
        let z = oracle::solve_consensus_unconstrained(&p).unwrap();
        let num: f64 = EXAMPLE2_HESSIAN
            .iter()
            .zip(&c)
            .map(|(&h, &ci)| h * ci)
            .sum();
        let den: f64 = EXAMPLE2_HESSIAN.iter().sum();
        assert_abs_diff_eq!(z[0], num / den, epsilon = 1e-10);
    }

    #[test]
    fn small_lsq_run_reaches_the_normal_equations_solution() {
        let g = Graph::new(2, &[(0, 1)], 1.0, &[0.5]).unwrap();
        let (a, b) = seeded_lsq_data(6, 2, 6);
        let p = build_distributed_lsq(&a, &b, &g, None).unwrap();
        let direct = oracle::solve_least_squares(&a, &b).unwrap();
        let x0 = DVector::zeros(4);
        let cfg = SimConfig {
            dt: 1e-3,
            t_end: 80.0,
            record_every: 200,
            ..Default::default()
        };
        let traj = simulate(&p, &g, &x0, &cfg).unwrap();
        let xf = &traj.final_record().state.x;
        for agent in 0..2 {
            for k in 0..2 {
                assert!(
                    (xf[agent * 2 + k] - direct[k]).abs() < 1e-3,
                    "agent {agent} component {k}: {} vs {}",
                    xf[agent * 2 + k],
                    direct[k]
                );
            }
        }
    }
}
