//! Distributed soft-margin SVM as an extended primal-dual flow.
//!
//! Each node holds a horizontal slice of the training set and its own
//! `(w_i, b_i, ξ_ij)` variables; consensus couples `w` and `b` across the
//! graph while hinge and slack constraints enter through projected dual
//! flows:
//!
//! ```text
//! ẇ   = -w - Lw - Lα - ζ          ζ_i = Σ_j θ_ij(-y_ij x_ij)
//! ḃ   = -Lb - Lβ - η              η_i = Σ_j θ_ij(-y_ij)
//! α̇   = Lw,  β̇ = Lb
//! θ̇_ij = [h_ij]⁺_θ                h_ij = 1 - ξ_ij - y_ij(w_iᵀx_ij + b_i)
//! μ̇_ij = [ξ_ij]⁺_μ
//! ξ̇_ij = [-pC - μ_ij + θ_ij]⁺_ξ
//! ```
//!
//! The adaptive coupling law acts on the stacked edge error of
//! `z_i = (w_i, b_i)`. Integration reuses the gated RK4 scheme of the main
//! dynamics with `θ`, `μ`, `ξ` clamped nonnegative after each step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{projection_plus, SimConfig, SimStatus};
use crate::error::{Error, Result};
use crate::graph::{eig_symmetric, Graph};

/// Horizontally partitioned training data plus the scaling constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmData {
    /// Per node: list of `(features, label)` with labels in `{-1, +1}`.
    pub partitions: Vec<Vec<(DVector<f64>, f64)>>,
    /// Scaling factor `p > 0` on the slack sum.
    pub p_scale: f64,
    /// Soft-margin trade-off `C > 0`.
    pub c: f64,
}

impl SvmData {
    pub fn total_samples(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }
}

/// Validated SVM problem bundle.
#[derive(Debug, Clone)]
pub struct SvmBundle {
    pub data: SvmData,
    /// `None` for the single-node (centralized) case, where no consensus
    /// coupling exists.
    pub graph: Option<Graph>,
    /// Feature dimension `m`.
    pub dim: usize,
    /// Per-node sample offsets into the flattened sample ordering.
    offsets: Vec<usize>,
}

impl SvmBundle {
    pub fn nodes(&self) -> usize {
        self.data.partitions.len()
    }

    pub fn sample_offset(&self, node: usize) -> usize {
        self.offsets[node]
    }
}

/// Build and validate the SVM bundle. `graph` must have one node per
/// partition; pass `None` only for a single partition.
pub fn build_svm(data: SvmData, graph: Option<Graph>) -> Result<SvmBundle> {
    if data.partitions.is_empty() {
        return Err(Error::validation("need at least one data partition"));
    }
    if !(data.p_scale > 0.0) || !(data.c > 0.0) {
        return Err(Error::validation(format!(
            "scaling constants must be positive: p = {}, C = {}",
            data.p_scale, data.c
        )));
    }
    let dim = data
        .partitions
        .iter()
        .flat_map(|s| s.iter())
        .map(|(x, _)| x.len())
        .next()
        .ok_or_else(|| Error::validation("every partition must be nonempty"))?;
    for (i, part) in data.partitions.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::validation(format!("partition {i} is empty")));
        }
        for (x, y) in part {
            if x.len() != dim {
                return Err(Error::validation(format!(
                    "inconsistent feature dimension: {} vs {}",
                    x.len(),
                    dim
                )));
            }
            if *y != 1.0 && *y != -1.0 {
                return Err(Error::validation(format!("label {y} outside {{-1, +1}}")));
            }
        }
    }
    match &graph {
        Some(g) => {
            if g.n() != data.partitions.len() {
                return Err(Error::validation(format!(
                    "graph has {} nodes but data has {} partitions",
                    g.n(),
                    data.partitions.len()
                )));
            }
        }
        None => {
            if data.partitions.len() != 1 {
                return Err(Error::validation(
                    "multi-node data needs a coupling graph; pass one per partition",
                ));
            }
        }
    }
    let mut offsets = Vec::with_capacity(data.partitions.len());
    let mut acc = 0;
    for part in &data.partitions {
        offsets.push(acc);
        acc += part.len();
    }
    Ok(SvmBundle {
        data,
        graph,
        dim,
        offsets,
    })
}

/// Stacked SVM state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmState {
    /// Per-node weight vectors, stacked `n·m`.
    pub w: DVector<f64>,
    /// Per-node biases, length `n`.
    pub b: DVector<f64>,
    /// Slack variables, one per sample; nonnegative.
    pub xi: DVector<f64>,
    /// Consensus duals for `w`.
    pub alpha_w: DVector<f64>,
    /// Consensus duals for `b`.
    pub alpha_b: DVector<f64>,
    /// Hinge-constraint duals, one per sample; nonnegative.
    pub theta: DVector<f64>,
    /// Slack-constraint duals, one per sample; nonnegative.
    pub mu_dual: DVector<f64>,
    /// Per-edge coupling weights.
    pub weights: Vec<f64>,
    pub t: f64,
}

impl SvmState {
    /// Cold start with everything at zero and the graph's weights.
    pub fn cold_start(bundle: &SvmBundle) -> Self {
        let n = bundle.nodes();
        let m = bundle.dim;
        let samples = bundle.data.total_samples();
        SvmState {
            w: DVector::zeros(n * m),
            b: DVector::zeros(n),
            xi: DVector::zeros(samples),
            alpha_w: DVector::zeros(n * m),
            alpha_b: DVector::zeros(n),
            theta: DVector::zeros(samples),
            mu_dual: DVector::zeros(samples),
            weights: bundle
                .graph
                .as_ref()
                .map(|g| g.weights().to_vec())
                .unwrap_or_default(),
            t: 0.0,
        }
    }
}

/// Derivatives of every SVM state group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmDerivatives {
    pub dw: DVector<f64>,
    pub db: DVector<f64>,
    pub dxi: DVector<f64>,
    pub dalpha_w: DVector<f64>,
    pub dalpha_b: DVector<f64>,
    pub dtheta: DVector<f64>,
    pub dmu: DVector<f64>,
    pub dweights: Vec<f64>,
}

impl SvmDerivatives {
    fn zeros(bundle: &SvmBundle) -> Self {
        let n = bundle.nodes();
        let m = bundle.dim;
        let samples = bundle.data.total_samples();
        let e = bundle.graph.as_ref().map(Graph::edge_count).unwrap_or(0);
        SvmDerivatives {
            dw: DVector::zeros(n * m),
            db: DVector::zeros(n),
            dxi: DVector::zeros(samples),
            dalpha_w: DVector::zeros(n * m),
            dalpha_b: DVector::zeros(n),
            dtheta: DVector::zeros(samples),
            dmu: DVector::zeros(samples),
            dweights: vec![0.0; e],
        }
    }

    /// Largest derivative magnitude across all groups: the stationarity
    /// measure used for convergence.
    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self
            .dw
            .iter()
            .chain(self.db.iter())
            .chain(self.dxi.iter())
            .chain(self.dalpha_w.iter())
            .chain(self.dalpha_b.iter())
            .chain(self.dtheta.iter())
            .chain(self.dmu.iter())
        {
            m = m.max(v.abs());
        }
        m
    }
}

/// The full SVM vector field at a state.
pub fn svm_rhs(
    state: &SvmState,
    bundle: &SvmBundle,
    epsilon: f64,
    adaptive: bool,
) -> SvmDerivatives {
    let mut out = SvmDerivatives::zeros(bundle);
    svm_rhs_into(state, bundle, epsilon, adaptive, &mut out);
    out
}

fn svm_rhs_into(
    state: &SvmState,
    bundle: &SvmBundle,
    epsilon: f64,
    adaptive: bool,
    out: &mut SvmDerivatives,
) {
    let n = bundle.nodes();
    let m = bundle.dim;
    let pc = bundle.data.p_scale * bundle.data.c;

    // ζ and η from the hinge duals
    let mut zeta = DVector::zeros(n * m);
    let mut eta = DVector::zeros(n);
    for i in 0..n {
        let off = bundle.sample_offset(i);
        for (j, (x, y)) in bundle.data.partitions[i].iter().enumerate() {
            let th = state.theta[off + j];
            let mut zi = zeta.rows_mut(i * m, m);
            zi.axpy(-th * *y, x, 1.0);
            eta[i] -= th * *y;
        }
    }

    // consensus couplings
    if let Some(g) = &bundle.graph {
        g.apply_laplacian(&state.weights, &state.w, m, &mut out.dalpha_w);
        g.apply_laplacian(&state.weights, &state.b, 1, &mut out.dalpha_b);
        // dw = -w - Lw - Lα_w - ζ
        out.dw.copy_from(&out.dalpha_w); // Lw
        let mut lalpha = DVector::zeros(n * m);
        g.apply_laplacian(&state.weights, &state.alpha_w, m, &mut lalpha);
        out.dw += &lalpha;
        out.dw += &state.w;
        out.dw += &zeta;
        out.dw.neg_mut();
        // db = -Lb - Lβ - η
        out.db.copy_from(&out.dalpha_b); // Lb
        let mut lbeta = DVector::zeros(n);
        g.apply_laplacian(&state.weights, &state.alpha_b, 1, &mut lbeta);
        out.db += &lbeta;
        out.db += &eta;
        out.db.neg_mut();
    } else {
        out.dalpha_w.fill(0.0);
        out.dalpha_b.fill(0.0);
        out.dw.copy_from(&state.w);
        out.dw += &zeta;
        out.dw.neg_mut();
        out.db.copy_from(&eta);
        out.db.neg_mut();
    }

    // gated dual and slack flows
    for i in 0..n {
        let off = bundle.sample_offset(i);
        let wi = state.w.rows(i * m, m);
        for (j, (x, y)) in bundle.data.partitions[i].iter().enumerate() {
            let s = off + j;
            let hinge = 1.0 - state.xi[s] - *y * (wi.dot(x) + state.b[i]);
            out.dtheta[s] = projection_plus(hinge, state.theta[s]);
            out.dmu[s] = projection_plus(state.xi[s], state.mu_dual[s]);
            out.dxi[s] = projection_plus(-pc - state.mu_dual[s] + state.theta[s], state.xi[s]);
        }
    }

    // adaptive coupling on the stacked edge error of z_i = (w_i, b_i)
    if adaptive {
        if let Some(g) = &bundle.graph {
            for (e, &(i, q)) in g.edges().iter().enumerate() {
                let mut err = 0.0;
                let mut derr = 0.0;
                for k in 0..m {
                    let d = state.w[i * m + k] - state.w[q * m + k];
                    err += d * d;
                    let dd = out.dw[i * m + k] - out.dw[q * m + k];
                    derr += dd * dd;
                }
                let db_ = state.b[i] - state.b[q];
                err += db_ * db_;
                let ddb = out.db[i] - out.db[q];
                derr += ddb * ddb;
                out.dweights[e] = epsilon * g.gains()[e] * (err + derr);
            }
        }
    } else {
        out.dweights.fill(0.0);
    }
}

/// One record of an SVM run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmRecord {
    pub state: SvmState,
    pub derivs: SvmDerivatives,
    /// λ₂ of the coupling Laplacian (0 for the single-node case).
    pub lambda2: f64,
    /// Stationarity measure: max derivative magnitude.
    pub residual: f64,
}

/// Recorded SVM trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmTrajectory {
    pub records: Vec<SvmRecord>,
    pub status: SimStatus,
    pub lambda2_initial: f64,
    pub nodes: usize,
    pub dim: usize,
    pub samples: usize,
    pub edge_count: usize,
    pub dt: f64,
}

impl SvmTrajectory {
    pub fn final_record(&self) -> &SvmRecord {
        self.records.last().expect("at least one record")
    }

    /// CSV layout mirroring the main trajectory schema:
    /// `t, w_*, b_*, xi_*, alphaw_*, alphab_*, theta_*, mu_*, w_edge*,
    /// lambda2, residual`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut header = String::from("t");
        let cols = [
            ("w", self.nodes * self.dim),
            ("b", self.nodes),
            ("xi", self.samples),
            ("alphaw", self.nodes * self.dim),
            ("alphab", self.nodes),
            ("theta", self.samples),
            ("mu", self.samples),
        ];
        for (name, count) in cols {
            for i in 1..=count {
                header.push_str(&format!(",{name}_{i}"));
            }
        }
        for i in 1..=self.edge_count {
            header.push_str(&format!(",w_edge{i}"));
        }
        header.push_str(",lambda2,residual");
        writeln!(out, "{header}")?;
        for r in &self.records {
            write!(out, "{}", crate::dynamics::fmt17(r.state.t))?;
            let groups: [&DVector<f64>; 7] = [
                &r.state.w,
                &r.state.b,
                &r.state.xi,
                &r.state.alpha_w,
                &r.state.alpha_b,
                &r.state.theta,
                &r.state.mu_dual,
            ];
            for gvec in groups {
                for v in gvec.iter() {
                    write!(out, ",{}", crate::dynamics::fmt17(*v))?;
                }
            }
            for v in &r.state.weights {
                write!(out, ",{}", crate::dynamics::fmt17(*v))?;
            }
            writeln!(
                out,
                ",{},{}",
                crate::dynamics::fmt17(r.lambda2),
                crate::dynamics::fmt17(r.residual)
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

/// Integrate the SVM flow with the gated RK4 scheme (frozen Laplacian per
/// step, θ/μ/ξ clamped nonnegative after each combined step).
pub fn svm_simulate(
    bundle: &SvmBundle,
    state0: SvmState,
    cfg: &SimConfig,
) -> Result<SvmTrajectory> {
    cfg.validate()?;
    let lambda2_initial = match &bundle.graph {
        Some(g) => {
            let mut gg = g.clone();
            gg.set_weights(&state0.weights)?;
            eig_symmetric(&gg.laplacian_n())?.lambda2()
        }
        None => 0.0,
    };

    let n_steps = (cfg.t_end / cfg.dt).round().max(1.0) as usize;
    let mut records = Vec::new();
    let mut state = state0;
    let mut status = SimStatus::HorizonReached;

    let lambda2_of = |weights: &[f64]| -> Result<f64> {
        match &bundle.graph {
            Some(g) => Ok(eig_symmetric(&g.laplacian_n_with(weights))?.lambda2()),
            None => Ok(0.0),
        }
    };

    let push = |state: &SvmState, records: &mut Vec<SvmRecord>| -> Result<bool> {
        let derivs = svm_rhs(state, bundle, cfg.epsilon, cfg.adaptive);
        let residual = derivs.max_norm();
        let lambda2 = lambda2_of(&state.weights)?;
        let converged = residual < cfg.kkt_tol;
        records.push(SvmRecord {
            state: state.clone(),
            derivs,
            lambda2,
            residual,
        });
        Ok(converged)
    };

    let mut k = [
        SvmDerivatives::zeros(bundle),
        SvmDerivatives::zeros(bundle),
        SvmDerivatives::zeros(bundle),
        SvmDerivatives::zeros(bundle),
    ];
    let mut stage = SvmState::cold_start(bundle);

    for i in 0..n_steps {
        state.t = i as f64 * cfg.dt;
        if i % cfg.record_every == 0 && push(&state, &mut records)? {
            status = SimStatus::Converged { t: state.t };
            break;
        }

        let dt = cfg.dt;
        let w0 = state.weights.clone();
        const COEFF: [f64; 3] = [0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                svm_rhs_into(&state, bundle, cfg.epsilon, cfg.adaptive, &mut k[0]);
            } else {
                let c = COEFF[s - 1] * dt;
                let prev = s - 1;
                stage.w.copy_from(&state.w);
                stage.w.axpy(c, &k[prev].dw, 1.0);
                stage.b.copy_from(&state.b);
                stage.b.axpy(c, &k[prev].db, 1.0);
                stage.xi.copy_from(&state.xi);
                stage.xi.axpy(c, &k[prev].dxi, 1.0);
                stage.alpha_w.copy_from(&state.alpha_w);
                stage.alpha_w.axpy(c, &k[prev].dalpha_w, 1.0);
                stage.alpha_b.copy_from(&state.alpha_b);
                stage.alpha_b.axpy(c, &k[prev].dalpha_b, 1.0);
                stage.theta.copy_from(&state.theta);
                stage.theta.axpy(c, &k[prev].dtheta, 1.0);
                stage.mu_dual.copy_from(&state.mu_dual);
                stage.mu_dual.axpy(c, &k[prev].dmu, 1.0);
                stage.weights.clone_from(&w0);
                let (done, rest) = k.split_at_mut(s);
                let _ = &done;
                svm_rhs_into(&stage, bundle, cfg.epsilon, cfg.adaptive, &mut rest[0]);
            }
        }
        let sixth = dt / 6.0;
        let combine = |y: &mut DVector<f64>,
                       k0: &DVector<f64>,
                       k1: &DVector<f64>,
                       k2: &DVector<f64>,
                       k3: &DVector<f64>| {
            for idx in 0..y.len() {
                y[idx] += sixth * (k0[idx] + 2.0 * k1[idx] + 2.0 * k2[idx] + k3[idx]);
            }
        };
        combine(&mut state.w, &k[0].dw, &k[1].dw, &k[2].dw, &k[3].dw);
        combine(&mut state.b, &k[0].db, &k[1].db, &k[2].db, &k[3].db);
        combine(&mut state.xi, &k[0].dxi, &k[1].dxi, &k[2].dxi, &k[3].dxi);
        combine(
            &mut state.alpha_w,
            &k[0].dalpha_w,
            &k[1].dalpha_w,
            &k[2].dalpha_w,
            &k[3].dalpha_w,
        );
        combine(
            &mut state.alpha_b,
            &k[0].dalpha_b,
            &k[1].dalpha_b,
            &k[2].dalpha_b,
            &k[3].dalpha_b,
        );
        combine(
            &mut state.theta,
            &k[0].dtheta,
            &k[1].dtheta,
            &k[2].dtheta,
            &k[3].dtheta,
        );
        combine(
            &mut state.mu_dual,
            &k[0].dmu,
            &k[1].dmu,
            &k[2].dmu,
            &k[3].dmu,
        );
        for idx in 0..state.xi.len() {
            state.xi[idx] = state.xi[idx].max(0.0);
            state.theta[idx] = state.theta[idx].max(0.0);
            state.mu_dual[idx] = state.mu_dual[idx].max(0.0);
        }
        if cfg.adaptive {
            for e in 0..state.weights.len() {
                state.weights[e] += sixth
                    * (k[0].dweights[e]
                        + 2.0 * k[1].dweights[e]
                        + 2.0 * k[2].dweights[e]
                        + k[3].dweights[e]);
            }
        }
        state.t = (i + 1) as f64 * cfg.dt;
        for (name, vec) in [("w", &state.w), ("b", &state.b), ("xi", &state.xi)] {
            for (idx, v) in vec.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        t: state.t,
                        component: format!("{name}[{idx}]"),
                    });
                }
            }
        }
    }
    if !status.converged() {
        state.t = n_steps as f64 * cfg.dt;
        if push(&state, &mut records)? {
            status = SimStatus::Converged { t: state.t };
        }
    }

    Ok(SvmTrajectory {
        records,
        status,
        lambda2_initial,
        nodes: bundle.nodes(),
        dim: bundle.dim,
        samples: bundle.data.total_samples(),
        edge_count: bundle.graph.as_ref().map(Graph::edge_count).unwrap_or(0),
        dt: cfg.dt,
    })
}

/// Training accuracy of the per-node classifiers `sign(w_iᵀx + b_i)`
/// on their own samples.
pub fn accuracy(state: &SvmState, bundle: &SvmBundle) -> f64 {
    let m = bundle.dim;
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..bundle.nodes() {
        let wi = state.w.rows(i * m, m);
        for (x, y) in &bundle.data.partitions[i] {
            let pred = wi.dot(x) + state.b[i];
            if pred * *y > 0.0 {
                correct += 1;
            }
            total += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}

/// Parse delimited samples, one per line: `label,feat1,...,featm`.
pub fn parse_samples(text: &str) -> Result<Vec<(DVector<f64>, f64)>> {
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::validation(format!(
                "line {}: need a label and at least one feature",
                lineno + 1
            )));
        }
        let label: f64 = fields[0].parse().map_err(|_| {
            Error::validation(format!("line {}: bad label {:?}", lineno + 1, fields[0]))
        })?;
        if label != 1.0 && label != -1.0 {
            return Err(Error::validation(format!(
                "line {}: label {label} outside {{-1, +1}}",
                lineno + 1
            )));
        }
        let feats: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::validation(format!("line {}: bad feature {f:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            Some(d) if d != feats.len() => {
                return Err(Error::validation(format!(
                    "line {}: {} features, expected {}",
                    lineno + 1,
                    feats.len(),
                    d
                )));
            }
            None => dim = Some(feats.len()),
            _ => {}
        }
        out.push((DVector::from_vec(feats), label));
    }
    if out.is_empty() {
        return Err(Error::validation("no samples found"));
    }
    Ok(out)
}

/// Deal samples to `n` nodes round-robin.
pub fn partition_round_robin(
    samples: Vec<(DVector<f64>, f64)>,
    n: usize,
) -> Result<Vec<Vec<(DVector<f64>, f64)>>> {
    if n == 0 {
        return Err(Error::validation("need at least one node"));
    }
    if samples.len() < n {
        return Err(Error::validation(format!(
            "{} samples cannot cover {} nodes",
            samples.len(),
            n
        )));
    }
    let mut parts = vec![Vec::new(); n];
    for (k, s) in samples.into_iter().enumerate() {
        parts[k % n].push(s);
    }
    Ok(parts)
}

/// Assign samples to nodes by an explicit, line-aligned node index list.
pub fn partition_explicit(
    samples: Vec<(DVector<f64>, f64)>,
    node_of_sample: &[usize],
    n: usize,
) -> Result<Vec<Vec<(DVector<f64>, f64)>>> {
    if node_of_sample.len() != samples.len() {
        return Err(Error::validation(format!(
            "partition file has {} entries for {} samples",
            node_of_sample.len(),
            samples.len()
        )));
    }
    let mut parts = vec![Vec::new(); n];
    for (s, &node) in samples.into_iter().zip(node_of_sample) {
        if node >= n {
            return Err(Error::validation(format!(
                "node index {node} outside 0..{n}"
            )));
        }
        parts[node].push(s);
    }
    if parts.iter().any(Vec::is_empty) {
        return Err(Error::validation("every node needs at least one sample"));
    }
    Ok(parts)
}

/// The symmetric two-node toy set: each node holds `(±e₁, ±1)`.
pub fn toy_two_node_data() -> SvmData {
    let plus = DVector::from_row_slice(&[1.0, 0.0]);
    let minus = DVector::from_row_slice(&[-1.0, 0.0]);
    SvmData {
        partitions: vec![
            vec![(plus.clone(), 1.0), (minus.clone(), -1.0)],
            vec![(plus, 1.0), (minus, -1.0)],
        ],
        p_scale: 1.0,
        c: 1.0,
    }
}
