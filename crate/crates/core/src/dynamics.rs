//! The adaptively synchronized distributed primal-dual vector field and a
//! fixed-step integrator with projection handling for the switched
//! inequality-dual dynamics.
//!
//! The flow couples four groups of variables:
//!
//! ```text
//! ẋ      = -∇f(x) - (L⊗I_l)x - (L⊗I_l)α - Σ_j θ_j ∇g_j(x)
//! α̇      = (L⊗I_l)x
//! θ̇_j    = [g_j(x)]⁺_{θ_j}                      (gated, keeps θ ≥ 0)
//! ȧ_iq   = ε·d_iq·(‖x_i-x_q‖² + ‖ẋ_i-ẋ_q‖²)    (adaptive coupling law)
//! ```
//!
//! Integration is explicit fourth-order Runge-Kutta with the θ gate
//! re-evaluated at every internal stage and a clamp `θ ← max(θ, 0)` after
//! the combined step. Coupling weights are slow variables: stage
//! evaluations use the Laplacian frozen at the step-start weights and the
//! new weights are written back once per full step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, KktResidual, StorageSnapshot};
use crate::error::{Error, Result};
use crate::graph::{eig_symmetric, Graph};
use crate::problem::ProblemSpec;

/// Stacked simulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Primal variables, length `n·l`.
    pub x: DVector<f64>,
    /// Consensus duals, length `n·l`.
    pub alpha: DVector<f64>,
    /// Inequality duals, one entry per constraint; nonnegative at all times.
    pub theta: DVector<f64>,
    /// Live coupling weights, one per edge; nondecreasing in time.
    pub weights: Vec<f64>,
    /// Simulation time in seconds.
    pub t: f64,
}

impl SystemState {
    /// Cold start: given primal, zero duals, graph weights as they stand.
    pub fn cold_start(x0: DVector<f64>, constraint_count: usize, g: &Graph) -> Self {
        SystemState {
            x: x0,
            alpha: DVector::zeros(0),
            theta: DVector::zeros(constraint_count),
            weights: g.weights().to_vec(),
            t: 0.0,
        }
        .with_zero_alpha()
    }

    fn with_zero_alpha(mut self) -> Self {
        self.alpha = DVector::zeros(self.x.len());
        self
    }

    /// Max-norm over all state groups (used for discretization slack).
    pub fn inf_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self
            .x
            .iter()
            .chain(self.alpha.iter())
            .chain(self.theta.iter())
        {
            m = m.max(v.abs());
        }
        for w in &self.weights {
            m = m.max(w.abs());
        }
        m
    }
}

/// Time derivatives of every state group plus the projection gate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub dx: DVector<f64>,
    pub dalpha: DVector<f64>,
    /// Gated θ derivatives; an entry is exactly 0 whenever its gate is closed.
    pub dtheta: DVector<f64>,
    /// Per-edge weight derivatives; always ≥ 0.
    pub dweights: Vec<f64>,
    /// `true` when the projection gate of the constraint is open
    /// (`θ_j > 0` or `g_j > 0`).
    pub active_set: Vec<bool>,
}

impl Derivatives {
    fn zeros(nl: usize, m: usize, e: usize) -> Self {
        Derivatives {
            dx: DVector::zeros(nl),
            dalpha: DVector::zeros(nl),
            dtheta: DVector::zeros(m),
            dweights: vec![0.0; e],
            active_set: vec![false; m],
        }
    }
}

/// Fixed-step integrator configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integration step.
    pub dt: f64,
    /// Simulation horizon.
    pub t_end: f64,
    /// Time-scale factor ε in (0, 1] multiplying the weight adaptation law.
    pub epsilon: f64,
    /// `false` freezes the coupling weights (the non-adaptive baseline).
    pub adaptive: bool,
    /// Keep one trajectory record every this many steps.
    pub record_every: usize,
    /// Early-exit tolerance on the max KKT residual.
    pub kkt_tol: f64,
    /// Reference weight `a* > 1` used by the storage functions.
    pub a_star: f64,
    /// Freeze the dual variables at their initial values (used by the
    /// decay-envelope analysis of the isolated primal flow).
    pub freeze_duals: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-4,
            t_end: 10.0,
            epsilon: 1.0,
            adaptive: true,
            record_every: 100,
            kkt_tol: 1e-6,
            a_star: 2.0,
            freeze_duals: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::validation(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::validation(format!(
                "t_end ({}) must exceed dt ({})",
                self.t_end, self.dt
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.record_every == 0 {
            return Err(Error::validation("record_every must be at least 1"));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::validation("kkt_tol must be positive"));
        }
        if !(self.a_star > 1.0) {
            return Err(Error::validation(format!(
                "a_star must exceed 1, got {}",
                self.a_star
            )));
        }
        Ok(())
    }
}

/// Which subsystem input a disturbance feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortTarget {
    /// Primal input (adds to ẋ).
    H1,
    /// Consensus-dual input (adds to α̇).
    H2,
    /// Inequality-dual input (perturbs the x seen by the constraint gates).
    H3,
}

/// Stage-level disturbance injection: returns Δu at a given time, `None`
/// outside the active window.
pub(crate) struct Injection<'a> {
    pub target: PortTarget,
    pub signal: &'a dyn Fn(f64) -> Option<DVector<f64>>,
    /// Convergence exit is suppressed until this time so the experiment
    /// actually plays out its disturbance window.
    pub active_until: f64,
}

/// The projection `[value]⁺_gate`: passes `value` when the gate variable is
/// positive or the value itself is positive, otherwise returns 0.
pub fn projection_plus(value: f64, gate_variable: f64) -> f64 {
    if gate_variable > 0.0 || value > 0.0 {
        value
    } else {
        0.0
    }
}

/// Primal vector field at the given state (uses the state's live weights).
pub fn primal_rhs(state: &SystemState, p: &ProblemSpec, g: &Graph) -> Result<DVector<f64>> {
    check_dims(state, p, g)?;
    let mut ws = Workspace::new(p, g);
    let mut dx = DVector::zeros(p.dim());
    primal_rhs_into(
        &state.x,
        &state.alpha,
        &state.theta,
        &state.weights,
        p,
        g,
        None,
        &mut ws,
        &mut dx,
    );
    Ok(dx)
}

/// Dual vector fields: consensus-dual derivative, gated inequality-dual
/// derivative, and the gate record.
pub fn dual_rhs(
    state: &SystemState,
    p: &ProblemSpec,
    g: &Graph,
) -> Result<(DVector<f64>, DVector<f64>, Vec<bool>)> {
    check_dims(state, p, g)?;
    let dalpha = g.laplacian_apply(&state.weights, &state.x, p.l());
    let mut dtheta = DVector::zeros(p.constraint_count());
    let mut active = vec![false; p.constraint_count()];
    let mut cvals = Vec::new();
    p.constraint_values(&state.x, &mut cvals);
    for (j, &gval) in cvals.iter().enumerate() {
        let th = state.theta[j];
        dtheta[j] = projection_plus(gval, th);
        active[j] = th > 0.0 || gval > 0.0;
    }
    Ok((dalpha, dtheta, active))
}

/// Adaptive coupling law: per-edge `ε·d_iq·(‖x_i-x_q‖² + ‖ẋ_i-ẋ_q‖²)`.
///
/// `dx` must be the already-computed primal derivative at the same state.
pub fn weight_rhs(state: &SystemState, dx: &DVector<f64>, g: &Graph, epsilon: f64) -> Vec<f64> {
    let l = state.x.len() / g.n();
    let mut out = vec![0.0; g.edge_count()];
    weight_rhs_into(&state.x, dx, g, epsilon, l, &mut out);
    out
}

fn weight_rhs_into(
    x: &DVector<f64>,
    dx: &DVector<f64>,
    g: &Graph,
    epsilon: f64,
    l: usize,
    out: &mut [f64],
) {
    for (e, &(i, q)) in g.edges().iter().enumerate() {
        let mut err = 0.0;
        let mut derr = 0.0;
        for k in 0..l {
            let d = x[i * l + k] - x[q * l + k];
            err += d * d;
            let dd = dx[i * l + k] - dx[q * l + k];
            derr += dd * dd;
        }
        out[e] = epsilon * g.gains()[e] * (err + derr);
    }
}

fn check_dims(state: &SystemState, p: &ProblemSpec, g: &Graph) -> Result<()> {
    if g.n() != p.n() {
        return Err(Error::validation(format!(
            "graph has {} agents, problem has {}",
            g.n(),
            p.n()
        )));
    }
    if state.x.len() != p.dim() || state.alpha.len() != p.dim() {
        return Err(Error::validation(format!(
            "state dimension {} / {} does not match n·l = {}",
            state.x.len(),
            state.alpha.len(),
            p.dim()
        )));
    }
    if state.theta.len() != p.constraint_count() {
        return Err(Error::validation(format!(
            "theta has {} entries, problem has {} constraints",
            state.theta.len(),
            p.constraint_count()
        )));
    }
    if state.weights.len() != g.edge_count() {
        return Err(Error::validation(format!(
            "state carries {} weights, graph has {} edges",
            state.weights.len(),
            g.edge_count()
        )));
    }
    Ok(())
}

struct Workspace {
    lap: DVector<f64>,
    xg: DVector<f64>,
    cvals: Vec<f64>,
}

impl Workspace {
    fn new(p: &ProblemSpec, _g: &Graph) -> Self {
        Workspace {
            lap: DVector::zeros(p.dim()),
            xg: DVector::zeros(p.dim()),
            cvals: Vec::with_capacity(p.constraint_count()),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn primal_rhs_into(
    x: &DVector<f64>,
    alpha: &DVector<f64>,
    theta: &DVector<f64>,
    weights: &[f64],
    p: &ProblemSpec,
    g: &Graph,
    injection: Option<&(PortTarget, DVector<f64>)>,
    ws: &mut Workspace,
    dx: &mut DVector<f64>,
) {
    let l = p.l();
    dx.fill(0.0);
    p.add_objective_gradient(x, dx);
    g.apply_laplacian(weights, x, l, &mut ws.lap);
    *dx += &ws.lap;
    g.apply_laplacian(weights, alpha, l, &mut ws.lap);
    *dx += &ws.lap;
    for (j, c) in p.constraints().iter().enumerate() {
        let xi = x.rows(c.agent * l, l);
        let mut block = dx.rows_mut(c.agent * l, l);
        let mut owned = block.clone_owned();
        c.add_scaled_gradient(xi, theta[j], &mut owned);
        block.copy_from(&owned);
    }
    dx.neg_mut();
    if let Some((PortTarget::H1, du)) = injection {
        *dx += du;
    }
}

/// Full derivative evaluation used by the integrator stages.
#[allow(clippy::too_many_arguments)]
fn eval_into(
    x: &DVector<f64>,
    alpha: &DVector<f64>,
    theta: &DVector<f64>,
    frozen_weights: &[f64],
    t: f64,
    p: &ProblemSpec,
    g: &Graph,
    cfg: &SimConfig,
    injection: Option<&Injection<'_>>,
    ws: &mut Workspace,
    out: &mut Derivatives,
) {
    let l = p.l();
    let inj_value = injection.and_then(|inj| (inj.signal)(t).map(|du| (inj.target, du)));

    primal_rhs_into(
        x,
        alpha,
        theta,
        frozen_weights,
        p,
        g,
        inj_value.as_ref(),
        ws,
        &mut out.dx,
    );

    if cfg.freeze_duals {
        out.dalpha.fill(0.0);
        out.dtheta.fill(0.0);
        for a in &mut out.active_set {
            *a = false;
        }
    } else {
        g.apply_laplacian(frozen_weights, x, l, &mut out.dalpha);
        if let Some((PortTarget::H2, du)) = &inj_value {
            out.dalpha += du;
        }
        let x_for_gates = if let Some((PortTarget::H3, du)) = &inj_value {
            ws.xg.copy_from(x);
            ws.xg += du;
            &ws.xg
        } else {
            x
        };
        p.constraint_values(x_for_gates, &mut ws.cvals);
        for (j, &gval) in ws.cvals.iter().enumerate() {
            let th = theta[j];
            out.dtheta[j] = projection_plus(gval, th);
            out.active_set[j] = th > 0.0 || gval > 0.0;
        }
    }

    if cfg.adaptive {
        weight_rhs_into(x, &out.dx, g, cfg.epsilon, l, &mut out.dweights);
    } else {
        out.dweights.fill(0.0);
    }
}

/// Reusable RK4 stepping buffers.
struct Stepper {
    ws: Workspace,
    k: [Derivatives; 4],
    xs: DVector<f64>,
    als: DVector<f64>,
    ths: DVector<f64>,
}

impl Stepper {
    fn new(p: &ProblemSpec, g: &Graph) -> Self {
        let nl = p.dim();
        let m = p.constraint_count();
        let e = g.edge_count();
        Stepper {
            ws: Workspace::new(p, g),
            k: [
                Derivatives::zeros(nl, m, e),
                Derivatives::zeros(nl, m, e),
                Derivatives::zeros(nl, m, e),
                Derivatives::zeros(nl, m, e),
            ],
            xs: DVector::zeros(nl),
            als: DVector::zeros(nl),
            ths: DVector::zeros(m),
        }
    }

    /// One gated RK4 step; mutates the state in place and writes the new
    /// weights back to the graph.
    fn advance(
        &mut self,
        state: &mut SystemState,
        p: &ProblemSpec,
        g: &mut Graph,
        cfg: &SimConfig,
        injection: Option<&Injection<'_>>,
    ) -> Result<()> {
        let dt = cfg.dt;
        let w0 = state.weights.clone();
        let t0 = state.t;

        // Stage offsets for classic RK4.
        const STAGE_COEFF: [f64; 3] = [0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                let (head, _) = self.k.split_at_mut(1);
                eval_into(
                    &state.x,
                    &state.alpha,
                    &state.theta,
                    &w0,
                    t0,
                    p,
                    g,
                    cfg,
                    injection,
                    &mut self.ws,
                    &mut head[0],
                );
            } else {
                let c = STAGE_COEFF[s - 1];
                let prev = s - 1;
                self.xs.copy_from(&state.x);
                self.xs.axpy(c * dt, &self.k[prev].dx, 1.0);
                self.als.copy_from(&state.alpha);
                self.als.axpy(c * dt, &self.k[prev].dalpha, 1.0);
                self.ths.copy_from(&state.theta);
                self.ths.axpy(c * dt, &self.k[prev].dtheta, 1.0);
                let t_stage = t0 + c * dt;
                let (done, rest) = self.k.split_at_mut(s);
                let _ = &done;
                eval_into(
                    &self.xs,
                    &self.als,
                    &self.ths,
                    &w0,
                    t_stage,
                    p,
                    g,
                    cfg,
                    injection,
                    &mut self.ws,
                    &mut rest[0],
                );
            }
        }

        let sixth = dt / 6.0;
        for idx in 0..state.x.len() {
            state.x[idx] += sixth
                * (self.k[0].dx[idx]
                    + 2.0 * self.k[1].dx[idx]
                    + 2.0 * self.k[2].dx[idx]
                    + self.k[3].dx[idx]);
            state.alpha[idx] += sixth
                * (self.k[0].dalpha[idx]
                    + 2.0 * self.k[1].dalpha[idx]
                    + 2.0 * self.k[2].dalpha[idx]
                    + self.k[3].dalpha[idx]);
        }
        for j in 0..state.theta.len() {
            let v = state.theta[j]
                + sixth
                    * (self.k[0].dtheta[j]
                        + 2.0 * self.k[1].dtheta[j]
                        + 2.0 * self.k[2].dtheta[j]
                        + self.k[3].dtheta[j]);
            // Projection clamp keeps the dual feasible exactly.
            state.theta[j] = v.max(0.0);
        }
        if cfg.adaptive {
            for e in 0..state.weights.len() {
                state.weights[e] += sixth
                    * (self.k[0].dweights[e]
                        + 2.0 * self.k[1].dweights[e]
                        + 2.0 * self.k[2].dweights[e]
                        + self.k[3].dweights[e]);
            }
        }
        state.t = t0 + dt;

        check_finite(state)?;
        g.set_weights(&state.weights)?;
        Ok(())
    }
}

fn check_finite(state: &SystemState) -> Result<()> {
    let groups: [(&str, &DVector<f64>); 3] = [
        ("x", &state.x),
        ("alpha", &state.alpha),
        ("theta", &state.theta),
    ];
    for (name, v) in groups {
        for (i, val) in v.iter().enumerate() {
            if !val.is_finite() {
                return Err(Error::Divergence {
                    t: state.t,
                    component: format!("{name}[{i}]"),
                });
            }
        }
    }
    for (i, w) in state.weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::Divergence {
                t: state.t,
                component: format!("weight[{i}]"),
            });
        }
    }
    Ok(())
}

/// One fixed-step update. Weights are written back to `g`; θ is clamped
/// nonnegative; `t` advances by `dt`. With `cfg.adaptive == false` the
/// weights stay untouched.
pub fn step(
    state: &SystemState,
    p: &ProblemSpec,
    g: &mut Graph,
    cfg: &SimConfig,
) -> Result<SystemState> {
    check_dims(state, p, g)?;
    cfg.validate()?;
    let mut next = state.clone();
    let mut stepper = Stepper::new(p, g);
    stepper.advance(&mut next, p, g, cfg, None)?;
    Ok(next)
}

/// Why a simulation ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimStatus {
    /// Max KKT residual fell below the configured tolerance at this time.
    Converged { t: f64 },
    /// The horizon was reached without meeting the tolerance.
    HorizonReached,
}

impl SimStatus {
    pub fn converged(&self) -> bool {
        matches!(self, SimStatus::Converged { .. })
    }
}

/// One decimated trajectory record: state, analytic derivatives, spectral
/// snapshot, storage values, and KKT residuals at a single instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub state: SystemState,
    pub derivs: Derivatives,
    /// λ₂ of the unlifted weighted Laplacian at this instant (the lift
    /// shares the same value).
    pub lambda2: f64,
    /// Largest Laplacian eigenvalue at this instant.
    pub lambda_n: f64,
    pub storage: StorageSnapshot,
    pub kkt: KktResidual,
    /// Disturbance value at this instant, when one was injected.
    pub disturbance: Option<DVector<f64>>,
}

impl Record {
    pub fn t(&self) -> f64 {
        self.state.t
    }
}

/// Time-indexed simulation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub status: SimStatus,
    /// λ₂ of the Laplacian at the run's initial weights (the `L₀` reference).
    pub lambda2_initial: f64,
    /// λ_n of the initial Laplacian.
    pub lambda_n_initial: f64,
    pub n: usize,
    pub l: usize,
    pub edge_count: usize,
    /// Edge list of the graph the run used (canonical `(lower, upper)` pairs).
    pub edges: Vec<(usize, usize)>,
    pub constraint_count: usize,
    pub dt: f64,
    pub adaptive: bool,
    pub epsilon: f64,
    pub a_star: f64,
}

impl Trajectory {
    pub fn final_record(&self) -> &Record {
        self.records
            .last()
            .expect("trajectory holds at least one record")
    }

    /// First recorded time after which `value(record) ≤ tol` holds through
    /// the end of the trajectory.
    pub fn time_to_tolerance(&self, tol: f64, value: impl Fn(&Record) -> f64) -> Option<f64> {
        let mut hit: Option<f64> = None;
        for r in &self.records {
            if value(r) <= tol {
                if hit.is_none() {
                    hit = Some(r.t());
                }
            } else {
                hit = None;
            }
        }
        hit
    }

    /// Stream records as CSV with the stable column layout
    /// `t, x_*, alpha_*, theta_*, w_edge*, lambda2, kkt_residual, V_total`.
    /// Floats carry 17 significant digits so equal trajectories are
    /// byte-identical.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let nl = self.n * self.l;
        let mut header = String::from("t");
        for i in 1..=nl {
            header.push_str(&format!(",x_{i}"));
        }
        for i in 1..=nl {
            header.push_str(&format!(",alpha_{i}"));
        }
        for i in 1..=self.constraint_count {
            header.push_str(&format!(",theta_{i}"));
        }
        for i in 1..=self.edge_count {
            header.push_str(&format!(",w_edge{i}"));
        }
        header.push_str(",lambda2,kkt_residual,V_total");
        writeln!(out, "{header}")?;
        for r in &self.records {
            write!(out, "{}", fmt17(r.state.t))?;
            for v in r.state.x.iter() {
                write!(out, ",{}", fmt17(*v))?;
            }
            for v in r.state.alpha.iter() {
                write!(out, ",{}", fmt17(*v))?;
            }
            for v in r.state.theta.iter() {
                write!(out, ",{}", fmt17(*v))?;
            }
            for v in &r.state.weights {
                write!(out, ",{}", fmt17(*v))?;
            }
            writeln!(
                out,
                ",{},{},{}",
                fmt17(r.lambda2),
                fmt17(r.kkt.max_residual()),
                fmt17(r.storage.v_total)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// 17 significant digits, scientific notation.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integrate from a cold start (`α(0) = 0`, `θ(0) = 0`).
pub fn simulate(
    p: &ProblemSpec,
    g: &Graph,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let state = SystemState::cold_start(x0.clone(), p.constraint_count(), g);
    simulate_from(p, g, state, cfg)
}

/// Integrate from an explicit initial state.
pub fn simulate_from(
    p: &ProblemSpec,
    g: &Graph,
    state0: SystemState,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    simulate_injected(p, g, state0, cfg, None)
}

pub(crate) fn simulate_injected(
    p: &ProblemSpec,
    g: &Graph,
    state0: SystemState,
    cfg: &SimConfig,
    injection: Option<&Injection<'_>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_dims(&state0, p, g)?;
    let mut g = g.clone();
    g.set_weights(&state0.weights)?;

    let spec0 = eig_symmetric(&g.laplacian_n())?;
    let lambda2_initial = spec0.lambda2();
    let lambda_n_initial = spec0.lambda_max();

    let n_steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut records = Vec::with_capacity(n_steps / cfg.record_every + 2);
    let mut state = state0;
    let mut stepper = Stepper::new(p, &g);
    let mut status = SimStatus::HorizonReached;

    let mut record_ws = Workspace::new(p, &g);
    let nl = p.dim();
    let m = p.constraint_count();
    let ec = g.edge_count();

    let push_record = |state: &SystemState,
                       g: &Graph,
                       ws: &mut Workspace,
                       records: &mut Vec<Record>|
     -> Result<bool> {
        let mut derivs = Derivatives::zeros(nl, m, ec);
        eval_into(
            &state.x,
            &state.alpha,
            &state.theta,
            &state.weights,
            state.t,
            p,
            g,
            cfg,
            injection,
            ws,
            &mut derivs,
        );
        let spec = eig_symmetric(&g.laplacian_n())?;
        let storage = diagnostics::storage_snapshot(state, &derivs, p, g, cfg.a_star, None)?;
        let kkt = diagnostics::kkt_residual(state, p, g)?;
        let disturbance = injection.and_then(|inj| (inj.signal)(state.t));
        let exit_blocked = injection
            .map(|inj| state.t <= inj.active_until)
            .unwrap_or(false);
        let converged = !exit_blocked && kkt.max_residual() < cfg.kkt_tol;
        records.push(Record {
            state: state.clone(),
            derivs,
            lambda2: spec.lambda2(),
            lambda_n: spec.lambda_max(),
            storage,
            kkt,
            disturbance,
        });
        Ok(converged)
    };

    for i in 0..n_steps {
        state.t = i as f64 * cfg.dt;
        if i % cfg.record_every == 0 {
            if push_record(&state, &g, &mut record_ws, &mut records)? {
                status = SimStatus::Converged { t: state.t };
                break;
            }
        }
        stepper.advance(&mut state, p, &mut g, cfg, injection)?;
    }
    if !status.converged() {
        state.t = n_steps as f64 * cfg.dt;
        if push_record(&state, &g, &mut record_ws, &mut records)? {
            status = SimStatus::Converged { t: state.t };
        }
    }

    Ok(Trajectory {
        records,
        status,
        lambda2_initial,
        lambda_n_initial,
        n: p.n(),
        l: p.l(),
        edge_count: ec,
        edges: g.edges().to_vec(),
        constraint_count: m,
        dt: cfg.dt,
        adaptive: cfg.adaptive,
        epsilon: cfg.epsilon,
        a_star: cfg.a_star,
    })
}
