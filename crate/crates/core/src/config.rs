//! Experiment configuration: serde-friendly sections that resolve into
//! problems, graphs, and integrator settings.
//!
//! Experiments are data. A config names either a builtin problem family
//! (`example1`, `example2`, `lsq`, `qlsq`, `svm`) or spells out an inline
//! problem; everything random is derived from one root seed through labeled
//! substreams, so a config plus a seed reproduces a run exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::apps::{
    self, build_svm, parse_samples, partition_explicit, partition_round_robin, SvmBundle, SvmData,
};
use crate::dynamics::{PortTarget, SimConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{Constraint, ProblemSpec, QuadraticFunction};
use crate::robustness::{DisturbanceSpec, SignalSpec};

/// Top-level experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub graph: Option<GraphSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub x0: X0Section,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSection>,
    #[serde(default)]
    pub compare: Option<CompareSection>,
}

/// Problem selection: a builtin family name or an inline spec.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub inline: Option<InlineProblem>,
    /// Least-squares sizes (lsq/qlsq builtins).
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default)]
    pub cols: Option<usize>,
    /// Box bounds (qlsq builtin).
    #[serde(default)]
    pub x_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub x_hi: Option<Vec<f64>>,
    /// SVM data file plus optional explicit partition file.
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default)]
    pub partition: Option<String>,
    #[serde(default)]
    pub p_scale: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
}

/// Inline problem: one objective per agent plus scalar-component
/// constraints `g(x) = p·x² + r·x + s` given as `(k, p, r, s)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    pub l: usize,
    pub agents: Vec<AgentSection>,
    /// Allow positive semidefinite objective blocks (aggregate convexity
    /// checked instead).
    #[serde(default)]
    pub psd_blocks: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Quadratic coefficient, row-major nested arrays.
    pub p: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    #[serde(default)]
    pub s: f64,
    #[serde(default)]
    pub constraints: Vec<ScalarConstraintSection>,
}

/// `g(x_k) = p·x² + r·x + s ≤ 0` on component `k` (1-based in configs).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarConstraintSection {
    pub k: usize,
    pub p: f64,
    pub r: f64,
    pub s: f64,
}

/// Graph section: full definition (n + edges) or gain/weight overrides for
/// a builtin's default topology.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default)]
    pub n: Option<usize>,
    /// 1-based agent pairs.
    #[serde(default)]
    pub edges: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub initial_weight: Option<f64>,
    #[serde(default)]
    pub gains: Option<GainsSpec>,
}

/// Scalar broadcast or per-edge list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainsSpec {
    Scalar(f64),
    PerEdge(Vec<f64>),
}

impl GainsSpec {
    fn resolve(&self, edge_count: usize) -> Result<Vec<f64>> {
        match self {
            GainsSpec::Scalar(d) => Ok(vec![*d; edge_count]),
            GainsSpec::PerEdge(v) => {
                if v.len() != edge_count {
                    return Err(Error::validation(format!(
                        "gains list has {} entries for {} edges",
                        v.len(),
                        edge_count
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub adaptive: bool,
    pub record_every: usize,
    pub kkt_tol: f64,
    pub a_star: f64,
    pub freeze_duals: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            dt: d.dt,
            t_end: d.t_end,
            epsilon: d.epsilon,
            adaptive: d.adaptive,
            record_every: d.record_every,
            kkt_tol: d.kkt_tol,
            a_star: d.a_star,
            freeze_duals: d.freeze_duals,
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            t_end: self.t_end,
            epsilon: self.epsilon,
            adaptive: self.adaptive,
            record_every: self.record_every,
            kkt_tol: self.kkt_tol,
            a_star: self.a_star,
            freeze_duals: self.freeze_duals,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct X0Section {
    /// `seeded`, `zeros`, or `explicit`.
    pub mode: String,
    pub scale: f64,
    pub values: Option<Vec<f64>>,
}

impl Default for X0Section {
    fn default() -> Self {
        X0Section {
            mode: "seeded".into(),
            scale: 1.0,
            values: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    /// `H1`, `H2`, or `H3`.
    pub target: String,
    /// `sinusoid`, `step`, or `white`.
    pub signal: String,
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: Option<f64>,
    #[serde(default)]
    pub t_on: Option<f64>,
    #[serde(default)]
    pub noise_seed: Option<u64>,
    pub window: (f64, f64),
}

impl DisturbanceSection {
    pub fn to_spec(&self) -> Result<DisturbanceSpec> {
        let target = match self.target.as_str() {
            "H1" | "h1" => PortTarget::H1,
            "H2" | "h2" => PortTarget::H2,
            "H3" | "h3" => PortTarget::H3,
            other => {
                return Err(Error::validation(format!(
                    "unknown disturbance target {other:?} (expected H1/H2/H3)"
                )))
            }
        };
        let signal = match self.signal.as_str() {
            "sinusoid" => SignalSpec::Sinusoid {
                amplitude: self.amplitude,
                frequency: self
                    .frequency
                    .ok_or_else(|| Error::validation("sinusoid disturbance needs a frequency"))?,
            },
            "step" => SignalSpec::Step {
                amplitude: self.amplitude,
                t_on: self.t_on.unwrap_or(self.window.0),
            },
            "white" => SignalSpec::White {
                amplitude: self.amplitude,
                seed: self.noise_seed.unwrap_or(0),
            },
            other => {
                return Err(Error::validation(format!(
                    "unknown disturbance signal {other:?} (expected sinusoid/step/white)"
                )))
            }
        };
        Ok(DisturbanceSpec {
            target,
            signal,
            window: self.window,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub consensus_tol: f64,
    pub xstar_tol: f64,
    /// When present, `compare` additionally sweeps these uniform gains and
    /// tabulates terminal λ₂ against the gain bound.
    pub sweep_gains: Option<Vec<f64>>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            consensus_tol: 1e-4,
            xstar_tol: 1e-3,
            sweep_gains: None,
        }
    }
}

/// A fully resolved experiment, ready to integrate.
#[derive(Debug, Clone)]
pub enum ResolvedProblem {
    Standard { problem: ProblemSpec, graph: Graph },
    Svm { bundle: SvmBundle },
}

#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub problem: ResolvedProblem,
    pub sim: SimConfig,
    pub x0: DVector<f64>,
    pub disturbance: Option<DisturbanceSpec>,
    pub seed: u64,
    /// Human-readable name of the resolved problem family.
    pub label: String,
}

fn build_graph_from_section(sec: &GraphSection) -> Result<Graph> {
    let n = sec
        .n
        .ok_or_else(|| Error::validation("custom graph section needs `n`"))?;
    let edges_1b = sec
        .edges
        .as_ref()
        .ok_or_else(|| Error::validation("custom graph section needs `edges`"))?;
    let mut edges = Vec::with_capacity(edges_1b.len());
    for &(i, q) in edges_1b {
        if i == 0 || q == 0 {
            return Err(Error::validation("config edges are 1-based; found index 0"));
        }
        edges.push((i - 1, q - 1));
    }
    let w0 = sec.initial_weight.unwrap_or(1.0);
    let gains = match &sec.gains {
        Some(gspec) => gspec.resolve(edges.len())?,
        None => vec![1.0; edges.len()],
    };
    if w0 < 1.0 {
        Graph::new_allowing_small_weights(n, &edges, w0, &gains)
    } else {
        Graph::new(n, &edges, w0, &gains)
    }
}

/// Apply gain / initial-weight overrides to a builtin's default graph.
fn apply_graph_overrides(mut g: Graph, sec: Option<&GraphSection>) -> Result<Graph> {
    let Some(sec) = sec else { return Ok(g) };
    if sec.n.is_some() || sec.edges.is_some() {
        return build_graph_from_section(sec);
    }
    if let Some(gspec) = &sec.gains {
        let gains = gspec.resolve(g.edge_count())?;
        let edges = g.edges().to_vec();
        let w0 = sec.initial_weight.unwrap_or(g.initial_weights()[0]);
        g = if w0 < 1.0 {
            Graph::new_allowing_small_weights(g.n(), &edges, w0, &gains)?
        } else {
            Graph::new(g.n(), &edges, w0, &gains)?
        };
    } else if let Some(w0) = sec.initial_weight {
        let edges = g.edges().to_vec();
        let gains = g.gains().to_vec();
        g = if w0 < 1.0 {
            Graph::new_allowing_small_weights(g.n(), &edges, w0, &gains)?
        } else {
            Graph::new(g.n(), &edges, w0, &gains)?
        };
    }
    Ok(g)
}

fn default_cycle4(gain: f64) -> Graph {
    Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], 1.0, &[gain; 4]).expect("cycle is connected")
}

fn inline_problem(spec: &InlineProblem) -> Result<ProblemSpec> {
    let l = spec.l;
    let mut objectives = Vec::with_capacity(spec.agents.len());
    let mut constraints = Vec::new();
    for (agent, a) in spec.agents.iter().enumerate() {
        if a.p.len() != l || a.p.iter().any(|row| row.len() != l) {
            return Err(Error::validation(format!(
                "agent {agent}: objective P must be {l}x{l}"
            )));
        }
        if a.r.len() != l {
            return Err(Error::validation(format!(
                "agent {agent}: r must have length {l}"
            )));
        }
        let flat: Vec<f64> = a.p.iter().flatten().copied().collect();
        let p = DMatrix::from_row_slice(l, l, &flat);
        objectives.push(QuadraticFunction::new(
            p,
            DVector::from_vec(a.r.clone()),
            a.s,
        )?);
        for c in &a.constraints {
            if c.k == 0 || c.k > l {
                return Err(Error::validation(format!(
                    "agent {agent}: constraint component {} outside 1..={l}",
                    c.k
                )));
            }
            constraints.push(Constraint::scalar(agent, c.k - 1, c.p, c.r, c.s));
        }
    }
    if spec.psd_blocks {
        ProblemSpec::new_with_psd_blocks(objectives, constraints)
    } else {
        ProblemSpec::new(objectives, constraints)
    }
}

fn resolve_x0(sec: &X0Section, dim: usize, seed: u64) -> Result<DVector<f64>> {
    match sec.mode.as_str() {
        "seeded" => Ok(apps::seeded_x0(dim, seed, sec.scale)),
        "zeros" => Ok(DVector::zeros(dim)),
        "explicit" => {
            let vals = sec
                .values
                .as_ref()
                .ok_or_else(|| Error::validation("x0.mode = explicit needs x0.values"))?;
            if vals.len() != dim {
                return Err(Error::validation(format!(
                    "x0.values has {} entries, expected {dim}",
                    vals.len()
                )));
            }
            Ok(DVector::from_vec(vals.clone()))
        }
        other => Err(Error::validation(format!(
            "unknown x0 mode {other:?} (expected seeded/zeros/explicit)"
        ))),
    }
}

impl ExperimentConfig {
    /// Parse a TOML config.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolve sections into a runnable experiment.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let seed = self.seed;
        let sim = self.sim.to_sim_config();
        sim.validate()?;

        let (problem, label) = match (&self.problem.builtin, &self.problem.inline) {
            (Some(name), None) => (self.resolve_builtin(name, seed)?, name.clone()),
            (None, Some(inline)) => {
                let p = inline_problem(inline)?;
                let g = match &self.graph {
                    Some(sec) => build_graph_from_section(sec)?,
                    None => {
                        return Err(Error::validation(
                            "inline problems need an explicit [graph] section",
                        ))
                    }
                };
                if g.n() != p.n() {
                    return Err(Error::validation(format!(
                        "graph has {} agents but the problem has {}",
                        g.n(),
                        p.n()
                    )));
                }
                (
                    ResolvedProblem::Standard {
                        problem: p,
                        graph: g,
                    },
                    "inline".to_string(),
                )
            }
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "specify either problem.builtin or problem.inline, not both",
                ))
            }
            (None, None) => {
                return Err(Error::validation(
                    "problem section needs either `builtin` or an inline spec",
                ))
            }
        };

        let x0 = match &problem {
            ResolvedProblem::Standard { problem: p, .. } => resolve_x0(&self.x0, p.dim(), seed)?,
            ResolvedProblem::Svm { .. } => DVector::zeros(0),
        };
        let disturbance = match &self.disturbance {
            Some(d) => Some(d.to_spec()?),
            None => None,
        };
        Ok(ResolvedExperiment {
            problem,
            sim,
            x0,
            disturbance,
            seed,
            label,
        })
    }

    fn resolve_builtin(&self, name: &str, seed: u64) -> Result<ResolvedProblem> {
        match name {
            "example1" => {
                let (p, g) = apps::build_example1();
                let g = apply_graph_overrides(g, self.graph.as_ref())?;
                if g.n() != p.n() {
                    return Err(Error::validation("example1 needs a 3-agent graph"));
                }
                Ok(ResolvedProblem::Standard {
                    problem: p,
                    graph: g,
                })
            }
            "example2" => {
                let (p, g, _) = apps::build_example2(seed);
                let g = apply_graph_overrides(g, self.graph.as_ref())?;
                if g.n() != p.n() {
                    return Err(Error::validation("example2 needs a 10-agent graph"));
                }
                Ok(ResolvedProblem::Standard {
                    problem: p,
                    graph: g,
                })
            }
            "lsq" => {
                let rows = self.problem.rows.unwrap_or(100);
                let cols = self.problem.cols.unwrap_or(80);
                let g = apply_graph_overrides(default_cycle4(0.1), self.graph.as_ref())?;
                let (a, b) = apps::seeded_lsq_data(rows, cols, seed);
                let p = apps::build_distributed_lsq(&a, &b, &g, None)?;
                Ok(ResolvedProblem::Standard {
                    problem: p,
                    graph: g,
                })
            }
            "qlsq" => {
                let rows = self.problem.rows.unwrap_or(20);
                let cols = self.problem.cols.unwrap_or(4);
                let g = apply_graph_overrides(default_cycle4(2.0), self.graph.as_ref())?;
                let (a, b) = apps::seeded_lsq_data(rows, cols, seed);
                let lo = match &self.problem.x_lo {
                    Some(v) => DVector::from_vec(v.clone()),
                    None => DVector::from_element(cols, -0.1),
                };
                let hi = match &self.problem.x_hi {
                    Some(v) => DVector::from_vec(v.clone()),
                    None => DVector::from_element(cols, 0.1),
                };
                let p = apps::build_box_constrained_lsq(&a, &b, &lo, &hi, &g, None)?;
                Ok(ResolvedProblem::Standard {
                    problem: p,
                    graph: g,
                })
            }
            "svm" => {
                let data = match &self.problem.data {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| {
                            Error::validation(format!("cannot read SVM data {path:?}: {e}"))
                        })?;
                        let samples = parse_samples(&text)?;
                        let n = self.graph.as_ref().and_then(|g| g.n).unwrap_or(2);
                        let partitions = match &self.problem.partition {
                            Some(ppath) => {
                                let ptext = std::fs::read_to_string(ppath).map_err(|e| {
                                    Error::validation(format!(
                                        "cannot read partition file {ppath:?}: {e}"
                                    ))
                                })?;
                                let ids: Vec<usize> = ptext
                                    .split_whitespace()
                                    .map(|w| {
                                        w.parse::<usize>().map_err(|_| {
                                            Error::validation(format!(
                                                "bad node index {w:?} in partition file"
                                            ))
                                        })
                                    })
                                    .collect::<Result<_>>()?;
                                partition_explicit(samples, &ids, n)?
                            }
                            None => partition_round_robin(samples, n)?,
                        };
                        SvmData {
                            partitions,
                            p_scale: self.problem.p_scale.unwrap_or(1.0),
                            c: self.problem.c.unwrap_or(1.0),
                        }
                    }
                    None => {
                        let mut d = apps::svm::toy_two_node_data();
                        d.p_scale = self.problem.p_scale.unwrap_or(1.0);
                        d.c = self.problem.c.unwrap_or(1.0);
                        d
                    }
                };
                let n = data.partitions.len();
                let graph = if n == 1 {
                    None
                } else {
                    let edges = ring_edges(n);
                    let default = Graph::new(n, &edges, 1.0, &vec![0.5; edges.len()])?;
                    Some(apply_graph_overrides(default, self.graph.as_ref())?)
                };
                Ok(ResolvedProblem::Svm {
                    bundle: build_svm(data, graph)?,
                })
            }
            other => Err(Error::validation(format!(
                "unknown builtin problem {other:?} (expected example1/example2/lsq/qlsq/svm)"
            ))),
        }
    }
}

fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    if n == 2 {
        vec![(0, 1)]
    } else {
        (0..n).map(|i| (i, (i + 1) % n)).collect()
    }
}
