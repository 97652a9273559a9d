//! Independent reference solvers for ground-truth optimizers and KKT
//! points.
//!
//! Everything here goes through direct linear algebra (factorizations,
//! active-set Newton refinement) and shares no code with the ODE
//! integration path, so agreement between the two is evidence rather than
//! tautology.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::replicate;
use crate::error::{Error, Result};
use crate::graph::eig_symmetric;
use crate::problem::{ProblemSpec, QuadraticFunction};

/// Largest stacked dimension the constrained active-set solver accepts.
pub const CONSTRAINED_DIM_CAP: usize = 20;
const PENALTY_ITER_CAP: usize = 1_000_000;
const ACTIVE_SET_ROUNDS: usize = 50;
const NEWTON_ITERS: usize = 100;

/// Minimizer of `Σ_i f_i(z)` over a single shared variable.
///
/// Solves `(Σ P_i) z = -Σ r_i` by dense factorization; the residual is
/// checked to `1e-10` relative.
pub fn solve_consensus_unconstrained(p: &ProblemSpec) -> Result<DVector<f64>> {
    if p.constraint_count() != 0 {
        return Err(Error::validation(
            "solve_consensus_unconstrained requires an unconstrained problem",
        ));
    }
    let (pf, rf) = collapse_objective(p);
    let lu = pf.clone().lu();
    let z = lu
        .solve(&(-&rf))
        .ok_or_else(|| Error::Singular("aggregate objective Hessian is singular".into()))?;
    let residual = (&pf * &z + &rf).norm();
    if residual > 1e-10 * rf.norm().max(1.0) {
        return Err(Error::Singular(format!(
            "consensus solve residual {residual:.3e} too large"
        )));
    }
    Ok(z)
}

fn collapse_objective(p: &ProblemSpec) -> (DMatrix<f64>, DVector<f64>) {
    let l = p.l();
    let mut pf = DMatrix::zeros(l, l);
    let mut rf = DVector::zeros(l);
    for f in p.objectives() {
        pf += f.hessian();
        rf += f.linear();
    }
    (pf, rf)
}

/// Least-squares solution of `min ½‖Ax - b‖²` through the normal equations.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::validation(format!(
            "A has {} rows but b has {} entries",
            a.nrows(),
            b.len()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::validation(format!(
            "A must be tall ({}x{} given)",
            a.nrows(),
            a.ncols()
        )));
    }
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    match nalgebra::Cholesky::new(ata.clone()) {
        Some(chol) => Ok(chol.solve(&atb)),
        None => {
            let spec = eig_symmetric(&ata)?;
            Err(Error::Singular(format!(
                "normal equations are rank-deficient: eig(AᵀA) ∈ [{:.3e}, {:.3e}]",
                spec.lambda_min(),
                spec.lambda_max()
            )))
        }
    }
}

/// Full saddle point `(x*, α*, θ*)` on a given weighted graph: the primal
/// and inequality duals come from the direct solves and the minimum-norm
/// `α*` solves `(L⊗I_l)α* = -∇f(x*) - Σθ*∇g` through the Laplacian
/// pseudoinverse.
///
/// The consensus dual is only determined up to the Laplacian kernel; the
/// minimum-norm representative is the canonical choice here.
pub fn saddle_point(
    p: &ProblemSpec,
    g: &crate::graph::Graph,
) -> Result<crate::diagnostics::SaddlePoint> {
    if g.n() != p.n() {
        return Err(Error::validation(format!(
            "graph has {} agents, problem has {}",
            g.n(),
            p.n()
        )));
    }
    let l = p.l();
    let (x, theta) = if p.constraint_count() == 0 {
        let z = solve_consensus_unconstrained(p)?;
        (replicate(&z, p.n()), DVector::zeros(0))
    } else {
        let sol = solve_constrained(p)?;
        (sol.x_stacked, sol.theta)
    };
    let mut rhs = -p.objective_gradient(&x)?;
    for (j, c) in p.constraints().iter().enumerate() {
        let xi = x.rows(c.agent * l, l);
        let mut block = rhs.rows_mut(c.agent * l, l);
        let mut owned = block.clone_owned();
        c.add_scaled_gradient(xi, -theta[j], &mut owned);
        block.copy_from(&owned);
    }

    // Pseudoinverse of the unlifted Laplacian via the Jacobi decomposition.
    let (vals, vecs) = crate::graph::jacobi_eigen(&g.laplacian_n())?;
    let n = g.n();
    let mut alpha = DVector::zeros(n * l);
    let tol = 1e-9 * vals.last().copied().unwrap_or(1.0).max(1.0);
    for k in 0..l {
        let rk = DVector::from_fn(n, |i, _| rhs[i * l + k]);
        let mut ak = DVector::zeros(n);
        for (j, &lam) in vals.iter().enumerate() {
            if lam.abs() <= tol {
                continue;
            }
            let vj = vecs.column(j);
            ak += (vj.dot(&rk) / lam) * vj;
        }
        for i in 0..n {
            alpha[i * l + k] = ak[i];
        }
    }
    // residual check: the projected system must be consistent
    let res = (g.laplacian_apply(g.weights(), &alpha, l) - &rhs).amax();
    if res > 1e-8 * (1.0 + rhs.amax()) {
        return Err(Error::Singular(format!(
            "dual reconstruction residual {res:.3e}; optimality sum condition violated?"
        )));
    }
    Ok(crate::diagnostics::SaddlePoint { x, alpha, theta })
}

/// Result of the constrained consensus solve.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    /// Shared optimizer `z* ∈ ℝ^l`.
    pub z: DVector<f64>,
    /// `z*` replicated across all agents.
    pub x_stacked: DVector<f64>,
    /// Multipliers, one per original problem constraint (duplicated
    /// constraints share their aggregate multiplier equally).
    pub theta: DVector<f64>,
    /// Indices of the original constraints active at the optimum.
    pub active: Vec<usize>,
}

/// Constrained consensus optimizer by penalized gradient descent followed
/// by active-set Newton refinement on the KKT system.
///
/// All agents share one variable `z`; every agent's local constraints
/// apply to it. The returned multipliers are verified nonnegative and the
/// KKT residual of the result is below `1e-8`.
pub fn solve_constrained(p: &ProblemSpec) -> Result<ConstrainedSolution> {
    if p.dim() > CONSTRAINED_DIM_CAP {
        return Err(Error::validation(format!(
            "constrained oracle accepts stacked dimension ≤ {CONSTRAINED_DIM_CAP}, got {}",
            p.dim()
        )));
    }
    let l = p.l();
    let (pf, rf) = collapse_objective(p);

    // Aggregate duplicate constraints: several agents frequently carry the
    // same local constraint, which would make the KKT system singular.
    let groups = group_constraints(p);
    let forms: Vec<QuadraticFunction> = groups.iter().map(|g| g.form.clone()).collect();

    // Unconstrained candidate first.
    let lu = pf.clone().lu();
    let z_u = lu
        .solve(&(-&rf))
        .ok_or_else(|| Error::Singular("aggregate objective Hessian is singular".into()))?;
    if forms.iter().all(|g| g.value(z_u.rows(0, l)) <= 1e-12) {
        return Ok(finish(p, &groups, z_u, &DVector::zeros(forms.len())));
    }

    // Exterior-penalty gradient phase to localize the active set. This is
    // only a warm start: the add/drop loop below corrects any
    // misidentification, so the phase exits on a loose tolerance.
    let mut z = z_u.clone();
    let mut iters_used = 0usize;
    for rho in [1e1, 1e3, 1e5] {
        let budget = (PENALTY_ITER_CAP - iters_used).min(PENALTY_ITER_CAP / 3);
        let (zn, used) = penalty_descent(&pf, &rf, &forms, z, rho, p.kappa(), budget)?;
        z = zn;
        iters_used += used;
    }

    // Candidate active set from near-active constraints.
    let mut active: Vec<usize> = forms
        .iter()
        .enumerate()
        .filter(|(_, g)| g.value(z.rows(0, l)) > -1e-6)
        .map(|(c, _)| c)
        .collect();

    for _round in 0..ACTIVE_SET_ROUNDS {
        let (zn, theta_a) = newton_kkt(&pf, &rf, &forms, &active, &z)?;
        z = zn;

        // Drop the most negative multiplier, if any.
        if let Some((pos, _)) = theta_a
            .iter()
            .enumerate()
            .filter(|(_, &th)| th < -1e-12)
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            active.remove(pos);
            continue;
        }
        // Add the most violated inactive constraint, if any.
        let violated = forms
            .iter()
            .enumerate()
            .filter(|(c, _)| !active.contains(c))
            .map(|(c, g)| (c, g.value(z.rows(0, l))))
            .filter(|(_, v)| *v > 1e-10)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((c, _)) = violated {
            active.push(c);
            active.sort_unstable();
            continue;
        }

        let mut theta = DVector::zeros(forms.len());
        for (slot, &c) in active.iter().enumerate() {
            theta[c] = theta_a[slot].max(0.0);
        }
        verify_consensus_kkt(&pf, &rf, &forms, &z, &theta)?;
        return Ok(finish(p, &groups, z, &theta));
    }
    Err(Error::SolverNonConvergence {
        iterations: ACTIVE_SET_ROUNDS,
        residual: f64::NAN,
    })
}

struct ConstraintGroup {
    form: QuadraticFunction,
    members: Vec<usize>,
}

fn group_constraints(p: &ProblemSpec) -> Vec<ConstraintGroup> {
    let l = p.l();
    let mut groups: Vec<ConstraintGroup> = Vec::new();
    for (idx, c) in p.constraints().iter().enumerate() {
        let q = c.as_block_quadratic(l);
        match groups.iter_mut().find(|g| quadratic_eq(&g.form, &q)) {
            Some(g) => g.members.push(idx),
            None => groups.push(ConstraintGroup {
                form: q,
                members: vec![idx],
            }),
        }
    }
    groups
}

fn quadratic_eq(a: &QuadraticFunction, b: &QuadraticFunction) -> bool {
    (a.hessian() - b.hessian()).amax() <= 1e-14
        && (a.linear() - b.linear()).amax() <= 1e-14
        && (a.offset() - b.offset()).abs() <= 1e-14
}

fn finish(
    p: &ProblemSpec,
    groups: &[ConstraintGroup],
    z: DVector<f64>,
    theta_groups: &DVector<f64>,
) -> ConstrainedSolution {
    let mut theta = DVector::zeros(p.constraint_count());
    let mut active = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let share = theta_groups[gi] / group.members.len() as f64;
        for &idx in &group.members {
            theta[idx] = share;
            if share > 1e-12 {
                active.push(idx);
            }
        }
    }
    active.sort_unstable();
    let x_stacked = replicate(&z, p.n());
    ConstrainedSolution {
        z,
        x_stacked,
        theta,
        active,
    }
}

fn penalty_descent(
    pf: &DMatrix<f64>,
    rf: &DVector<f64>,
    forms: &[QuadraticFunction],
    mut z: DVector<f64>,
    rho: f64,
    kappa: f64,
    iter_budget: usize,
) -> Result<(DVector<f64>, usize)> {
    let value = |z: &DVector<f64>| -> f64 {
        let mut v = 0.5 * z.dot(&(pf * z)) + rf.dot(z);
        for g in forms {
            let gv = g.value(z.rows(0, z.len())).max(0.0);
            v += rho * gv * gv;
        }
        v
    };
    let grad = |z: &DVector<f64>| -> DVector<f64> {
        let mut out = pf * z + rf;
        for g in forms {
            let gv = g.value(z.rows(0, z.len()));
            if gv > 0.0 {
                out += 2.0 * rho * gv * g.gradient(z.rows(0, z.len()));
            }
        }
        out
    };

    let base_step = 1.0 / kappa.max(1e-12);
    let scale = 1.0 + rf.norm();
    let mut used = 0;
    while used < iter_budget {
        let gz = grad(&z);
        let gnorm = gz.norm();
        if gnorm < 1e-6 * scale {
            return Ok((z, used));
        }
        // Armijo backtracking from the 1/κ smooth-objective step.
        let v0 = value(&z);
        let mut step = base_step;
        let mut accepted = false;
        for _ in 0..60 {
            let zc = &z - step * &gz;
            if value(&zc) <= v0 - 0.25 * step * gnorm * gnorm {
                z = zc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        used += 1;
        if !accepted {
            // no further f64 progress; good enough for a warm start
            return Ok((z, used));
        }
    }
    // budget exhausted: hand the current point to the active-set refinement
    Ok((z, used))
}

/// Newton iteration on the equality-constrained KKT system for a fixed
/// active set.
fn newton_kkt(
    pf: &DMatrix<f64>,
    rf: &DVector<f64>,
    forms: &[QuadraticFunction],
    active: &[usize],
    z0: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let l = z0.len();
    let na = active.len();
    let mut z = z0.clone();
    let mut theta = DVector::zeros(na);

    for _ in 0..NEWTON_ITERS {
        let mut res = DVector::zeros(l + na);
        let mut stat = pf * &z + rf;
        for (slot, &c) in active.iter().enumerate() {
            stat += theta[slot] * forms[c].gradient(z.rows(0, l));
        }
        res.rows_mut(0, l).copy_from(&stat);
        for (slot, &c) in active.iter().enumerate() {
            res[l + slot] = forms[c].value(z.rows(0, l));
        }
        if res.norm() < 1e-12 {
            return Ok((z, theta));
        }

        let mut jac = DMatrix::zeros(l + na, l + na);
        let mut h = pf.clone();
        for (slot, &c) in active.iter().enumerate() {
            h += theta[slot] * forms[c].hessian();
        }
        jac.view_mut((0, 0), (l, l)).copy_from(&h);
        for (slot, &c) in active.iter().enumerate() {
            let gcol = forms[c].gradient(z.rows(0, l));
            jac.view_mut((0, l + slot), (l, 1)).copy_from(&gcol);
            jac.view_mut((l + slot, 0), (1, l))
                .copy_from(&gcol.transpose());
        }
        let delta = jac
            .lu()
            .solve(&(-res))
            .ok_or_else(|| Error::Singular("KKT system singular for this active set".into()))?;
        z += delta.rows(0, l);
        for slot in 0..na {
            theta[slot] += delta[l + slot];
        }
    }
    let final_res = {
        let mut stat = pf * &z + rf;
        for (slot, &c) in active.iter().enumerate() {
            stat += theta[slot] * forms[c].gradient(z.rows(0, l));
        }
        stat.norm()
    };
    Err(Error::SolverNonConvergence {
        iterations: NEWTON_ITERS,
        residual: final_res,
    })
}

/// Re-derive the full KKT residual of a candidate from scratch before
/// handing it out.
fn verify_consensus_kkt(
    pf: &DMatrix<f64>,
    rf: &DVector<f64>,
    forms: &[QuadraticFunction],
    z: &DVector<f64>,
    theta_groups: &DVector<f64>,
) -> Result<()> {
    let l = z.len();
    let mut stat = pf * z + rf;
    for (c, g) in forms.iter().enumerate() {
        stat += theta_groups[c] * g.gradient(z.rows(0, l));
    }
    let mut residual = stat.amax();
    for (c, g) in forms.iter().enumerate() {
        let gv = g.value(z.rows(0, l));
        residual = residual.max(gv); // feasibility
        residual = residual.max((theta_groups[c] * gv).abs()); // complementarity
        residual = residual.max(-theta_groups[c]); // dual feasibility
    }
    if residual > 1e-8 {
        return Err(Error::SolverNonConvergence {
            iterations: 0,
            residual,
        });
    }
    Ok(())
}
