//! Distributed optimization problem data: per-agent smooth convex
//! objectives and local inequality constraints, all as explicit quadratic
//! forms.
//!
//! Every objective and constraint in scope (least squares, box constraints
//! written as quadratics, soft-margin SVM pieces) is quadratic or affine,
//! so one representation covers the whole problem family:
//!
//! ```text
//! value(z)    = ½ zᵀPz + rᵀz + s
//! gradient(z) = Pz + r
//! hessian     = P
//! ```

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::eig_symmetric;

/// Symmetry tolerance on the quadratic coefficient.
pub const QUADRATIC_SYMMETRY_TOL: f64 = 1e-12;

/// One quadratic form `z ↦ ½ zᵀPz + rᵀz + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFunction {
    p: DMatrix<f64>,
    r: DVector<f64>,
    s: f64,
}

impl QuadraticFunction {
    pub fn new(p: DMatrix<f64>, r: DVector<f64>, s: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::validation(format!(
                "quadratic coefficient must be square, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if p.nrows() != r.len() {
            return Err(Error::validation(format!(
                "quadratic/linear dimension mismatch: {}x{} vs {}",
                p.nrows(),
                p.ncols(),
                r.len()
            )));
        }
        let mut max_asym = 0.0f64;
        for i in 0..p.nrows() {
            for j in (i + 1)..p.ncols() {
                max_asym = max_asym.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        if max_asym > QUADRATIC_SYMMETRY_TOL {
            return Err(Error::validation(format!(
                "quadratic coefficient not symmetric: max |p_ij - p_ji| = {max_asym:.3e}"
            )));
        }
        Ok(QuadraticFunction { p, r, s })
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn value(&self, z: DVectorView<'_, f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.r.dot(&z) + self.s
    }

    pub fn gradient(&self, z: DVectorView<'_, f64>) -> DVector<f64> {
        &self.p * z + &self.r
    }

    /// `out += scale · P v` (the Hessian action; used for analytic port
    /// derivatives).
    pub fn add_scaled_hessian_apply(
        &self,
        v: DVectorView<'_, f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        debug_assert_eq!(out.len(), self.dim());
        out.gemv(scale, &self.p, &v, 1.0);
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn offset(&self) -> f64 {
        self.s
    }
}

/// One inequality constraint `g(·) ≤ 0` attached to an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Agent the constraint belongs to (0-based).
    pub agent: usize,
    pub form: ConstraintForm,
}

/// Constraint shapes.
///
/// The problem statement attaches constraints to single scalar components
/// `x_{ik}`; the academic three-agent example couples both components of an
/// agent's state, so an agent-local vector form is supported as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintForm {
    /// `g(x_{ik}) = p·x² + r·x + s` acting on component `k` of the agent
    /// block. Note the scalar convention carries no ½ on `p`.
    Scalar {
        component: usize,
        p: f64,
        r: f64,
        s: f64,
    },
    /// `g(x_i) = ½ x_iᵀPx_i + rᵀx_i + s` over the whole agent block.
    Vector(QuadraticFunction),
}

impl Constraint {
    pub fn scalar(agent: usize, component: usize, p: f64, r: f64, s: f64) -> Self {
        Constraint {
            agent,
            form: ConstraintForm::Scalar { component, p, r, s },
        }
    }

    pub fn vector(agent: usize, q: QuadraticFunction) -> Self {
        Constraint {
            agent,
            form: ConstraintForm::Vector(q),
        }
    }

    pub fn value(&self, x_agent: DVectorView<'_, f64>) -> f64 {
        match &self.form {
            ConstraintForm::Scalar { component, p, r, s } => {
                let x = x_agent[*component];
                p * x * x + r * x + s
            }
            ConstraintForm::Vector(q) => q.value(x_agent),
        }
    }

    /// Gradient over the agent block, accumulated as `out += scale · ∇g`.
    pub fn add_scaled_gradient(
        &self,
        x_agent: DVectorView<'_, f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        match &self.form {
            ConstraintForm::Scalar {
                component, p, r, ..
            } => {
                out[*component] += scale * (2.0 * p * x_agent[*component] + r);
            }
            ConstraintForm::Vector(q) => {
                out.gemv(scale, q.hessian(), &x_agent, 1.0);
                out.axpy(scale, q.linear(), 1.0);
            }
        }
    }

    pub fn gradient(&self, x_agent: DVectorView<'_, f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x_agent.len());
        self.add_scaled_gradient(x_agent, 1.0, &mut out);
        out
    }

    /// Hessian action over the agent block: `out += scale · (∇²g) v`.
    pub fn add_scaled_hessian_apply(
        &self,
        v: DVectorView<'_, f64>,
        scale: f64,
        out: &mut DVector<f64>,
    ) {
        match &self.form {
            ConstraintForm::Scalar { component, p, .. } => {
                out[*component] += scale * 2.0 * p * v[*component];
            }
            ConstraintForm::Vector(q) => q.add_scaled_hessian_apply(v, scale, out),
        }
    }

    /// The constraint as a quadratic over the `l`-dimensional agent block.
    pub fn as_block_quadratic(&self, l: usize) -> QuadraticFunction {
        match &self.form {
            ConstraintForm::Scalar { component, p, r, s } => {
                let mut pm = DMatrix::zeros(l, l);
                pm[(*component, *component)] = 2.0 * p;
                let mut rv = DVector::zeros(l);
                rv[*component] = *r;
                QuadraticFunction::new(pm, rv, *s).expect("scalar embed is well-formed")
            }
            ConstraintForm::Vector(q) => q.clone(),
        }
    }
}

/// Evaluated constraint: value and gradient over the owning agent's block.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub agent: usize,
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// The distributed problem: `n` agents, primal dimension `l` each,
/// one strongly convex quadratic objective per agent plus local inequality
/// constraints.
///
/// The strong-convexity modulus `mu` and smoothness constant `kappa` are
/// computed from the objective blocks at construction, not user-supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    n: usize,
    l: usize,
    objectives: Vec<QuadraticFunction>,
    constraints: Vec<Constraint>,
    mu: f64,
    kappa: f64,
}

impl ProblemSpec {
    /// Strictly convex blocks: every objective must have `λ_min > 0`.
    pub fn new(objectives: Vec<QuadraticFunction>, constraints: Vec<Constraint>) -> Result<Self> {
        let spec = Self::validate(objectives, constraints)?;
        if spec.mu <= 0.0 {
            return Err(Error::validation(format!(
                "objective blocks must be strongly convex: min block eigenvalue = {:.3e}",
                spec.mu
            )));
        }
        Ok(spec)
    }

    /// Relaxed path for least-squares partitions: blocks may be positive
    /// semidefinite as long as the *sum* of the block Hessians is positive
    /// definite (global strong convexity on the consensus subspace).
    pub fn new_with_psd_blocks(
        objectives: Vec<QuadraticFunction>,
        constraints: Vec<Constraint>,
    ) -> Result<Self> {
        let spec = Self::validate(objectives, constraints)?;
        if spec.mu < -1e-9 {
            return Err(Error::validation(format!(
                "objective blocks must be at least positive semidefinite: \
                 min block eigenvalue = {:.3e}",
                spec.mu
            )));
        }
        let mut sum = DMatrix::zeros(spec.l, spec.l);
        for f in &spec.objectives {
            sum += f.hessian();
        }
        let lmin = eig_symmetric(&sum)?.lambda_min();
        if lmin <= 1e-12 {
            return Err(Error::validation(format!(
                "sum of objective Hessians must be positive definite, λ_min = {lmin:.3e}"
            )));
        }
        Ok(spec)
    }

    fn validate(objectives: Vec<QuadraticFunction>, constraints: Vec<Constraint>) -> Result<Self> {
        let n = objectives.len();
        if n == 0 {
            return Err(Error::validation("need at least one agent objective"));
        }
        let l = objectives[0].dim();
        if l == 0 {
            return Err(Error::validation("agent dimension must be positive"));
        }
        for (i, f) in objectives.iter().enumerate() {
            if f.dim() != l {
                return Err(Error::validation(format!(
                    "objective {} has dimension {}, expected {}",
                    i,
                    f.dim(),
                    l
                )));
            }
        }
        let mut mu = f64::INFINITY;
        let mut kappa = f64::NEG_INFINITY;
        for f in &objectives {
            let spec = eig_symmetric(f.hessian())?;
            mu = mu.min(spec.lambda_min());
            kappa = kappa.max(spec.lambda_max());
        }
        for (c_idx, c) in constraints.iter().enumerate() {
            if c.agent >= n {
                return Err(Error::validation(format!(
                    "constraint {c_idx} references agent {} outside 0..{n}",
                    c.agent
                )));
            }
            match &c.form {
                ConstraintForm::Scalar { component, p, .. } => {
                    if *component >= l {
                        return Err(Error::validation(format!(
                            "constraint {c_idx} references component {component} outside 0..{l}"
                        )));
                    }
                    if *p < 0.0 {
                        return Err(Error::validation(format!(
                            "constraint {c_idx} is concave (p = {p}); constraints must be convex"
                        )));
                    }
                }
                ConstraintForm::Vector(q) => {
                    if q.dim() != l {
                        return Err(Error::validation(format!(
                            "constraint {c_idx} has dimension {}, expected {}",
                            q.dim(),
                            l
                        )));
                    }
                    let lmin = eig_symmetric(q.hessian())?.lambda_min();
                    if lmin < -1e-9 {
                        return Err(Error::validation(format!(
                            "constraint {c_idx} is not convex: λ_min(∇²g) = {lmin:.3e}"
                        )));
                    }
                }
            }
        }
        Ok(ProblemSpec {
            n,
            l,
            objectives,
            constraints,
            mu,
            kappa,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Stacked primal dimension `n·l`.
    pub fn dim(&self) -> usize {
        self.n * self.l
    }

    pub fn objectives(&self) -> &[QuadraticFunction] {
        &self.objectives
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    /// Strong-convexity modulus: the smallest block-Hessian eigenvalue.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Smoothness constant: the largest block-Hessian eigenvalue.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::validation(format!(
                "state has length {}, expected n·l = {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Block-stacked objective gradient `(∇f_1(x_1), …, ∇f_n(x_n))`.
    pub fn objective_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut out = DVector::zeros(self.dim());
        self.add_objective_gradient(x, &mut out);
        Ok(out)
    }

    /// `out += ∇f(x)`, blockwise, without allocation.
    pub(crate) fn add_objective_gradient(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for (i, f) in self.objectives.iter().enumerate() {
            let xi = x.rows(i * self.l, self.l);
            let mut oi = out.rows_mut(i * self.l, self.l);
            oi.gemv(1.0, f.hessian(), &xi, 1.0);
            oi += f.linear();
        }
    }

    /// Sum of the per-agent objective values.
    pub fn objective_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self
            .objectives
            .iter()
            .enumerate()
            .map(|(i, f)| f.value(x.rows(i * self.l, self.l)))
            .sum())
    }

    /// Evaluate every constraint at the stacked state.
    pub fn constraint_eval(&self, x: &DVector<f64>) -> Result<Vec<ConstraintEval>> {
        self.check_dim(x)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| {
                let xi = x.rows(c.agent * self.l, self.l);
                ConstraintEval {
                    agent: c.agent,
                    value: c.value(xi),
                    gradient: c.gradient(xi),
                }
            })
            .collect())
    }

    /// Constraint values only (no gradients), cheap form for gating.
    pub(crate) fn constraint_values(&self, x: &DVector<f64>, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.constraints
                .iter()
                .map(|c| c.value(x.rows(c.agent * self.l, self.l))),
        );
    }

    /// Block-diagonal Hessian `ℍ` of the stacked objective.
    pub fn hessian_block(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for (i, f) in self.objectives.iter().enumerate() {
            let mut view = m.view_mut((i * self.l, i * self.l), (self.l, self.l));
            view.copy_from(f.hessian());
        }
        m
    }
}
