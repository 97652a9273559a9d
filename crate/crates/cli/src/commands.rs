//! The `run` and `compare` command bodies.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adpdd::apps::{svm_simulate, SvmState};
use adpdd::config::{ExperimentConfig, ResolvedProblem};
use adpdd::diagnostics::{compare_convergence, standard_report};
use adpdd::dynamics::{simulate, SimConfig, SimStatus, Trajectory};
use adpdd::robustness::{estimate_gain, simulate_with_disturbance};
use adpdd::{Error, Result};
use serde::Serialize;

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("cannot read config {path:?}: {e}")))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(config_path: &Path, out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => config_path.parent().unwrap_or(Path::new(".")).join("out"),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::validation(format!("cannot create output dir {dir:?}: {e}")))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::validation(format!("cannot write {path:?}: {e}")))
}

#[derive(Serialize)]
struct Meta<'a> {
    seed: u64,
    label: &'a str,
    version: &'a str,
    /// The exact config this run resolved from; re-running it with the same
    /// seed reproduces the outputs byte for byte.
    config: &'a ExperimentConfig,
}

fn write_meta(dir: &Path, cfg: &ExperimentConfig, label: &str) -> Result<()> {
    let meta = Meta {
        seed: cfg.seed,
        label,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let json = serde_json::to_vec_pretty(&meta)
        .map_err(|e| Error::validation(format!("meta serialization failed: {e}")))?;
    write_file(dir, "meta.json", &json)
}

fn status_code(status: &SimStatus) -> ExitCode {
    if status.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2u8)
    }
}

pub fn run(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = load_config(config_path, seed)?;
    let resolved = cfg.resolve()?;
    let dir = out_dir(config_path, out);

    match &resolved.problem {
        ResolvedProblem::Standard { problem, graph } => {
            let (trajectory, gain_json) = match &resolved.disturbance {
                None => (simulate(problem, graph, &resolved.x0, &resolved.sim)?, None),
                Some(d) => {
                    let run = simulate_with_disturbance(
                        problem,
                        graph,
                        &resolved.x0,
                        &resolved.sim,
                        d,
                        resolved.seed,
                    )?;
                    let gain = estimate_gain(&run, problem, graph, resolved.sim.a_star)?;
                    (run.trajectory, Some(gain))
                }
            };

            let mut csv = Vec::new();
            trajectory
                .write_csv(&mut csv)
                .map_err(|e| Error::validation(format!("CSV write failed: {e}")))?;
            write_file(&dir, "trajectory.csv", &csv)?;

            #[derive(Serialize)]
            struct RunReport<'a> {
                status: &'a SimStatus,
                report: adpdd::diagnostics::VerificationReport,
                #[serde(skip_serializing_if = "Option::is_none")]
                gain: Option<adpdd::robustness::GainReport>,
            }
            let report = RunReport {
                status: &trajectory.status,
                report: standard_report(&trajectory, problem, graph)?,
                gain: gain_json,
            };
            let json = serde_json::to_vec_pretty(&report)
                .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
            write_file(&dir, "report.json", &json)?;
            write_meta(&dir, &cfg, &resolved.label)?;
            Ok(status_code(&trajectory.status))
        }
        ResolvedProblem::Svm { bundle } => {
            let state0 = SvmState::cold_start(bundle);
            let traj = svm_simulate(bundle, state0, &resolved.sim)?;
            let mut csv = Vec::new();
            traj.write_csv(&mut csv)
                .map_err(|e| Error::validation(format!("CSV write failed: {e}")))?;
            write_file(&dir, "trajectory.csv", &csv)?;

            #[derive(Serialize)]
            struct SvmReport {
                status: SimStatus,
                final_residual: f64,
                training_accuracy: f64,
                lambda2_initial: f64,
                lambda2_terminal: f64,
            }
            let last = traj.final_record();
            let report = SvmReport {
                status: traj.status,
                final_residual: last.residual,
                training_accuracy: adpdd::apps::accuracy(&last.state, bundle),
                lambda2_initial: traj.lambda2_initial,
                lambda2_terminal: last.lambda2,
            };
            let json = serde_json::to_vec_pretty(&report)
                .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
            write_file(&dir, "report.json", &json)?;
            write_meta(&dir, &cfg, &resolved.label)?;
            Ok(status_code(&traj.status))
        }
    }
}

/// One row of the gain-sweep trade-off table.
#[derive(Serialize)]
struct TradeoffRow {
    gain: f64,
    terminal_lambda2: f64,
    /// `1/(λ_min(ℍ) + a*·λ₂)` at the member's terminal connectivity.
    gain_bound: f64,
    converged: bool,
}

pub fn compare(config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<ExitCode> {
    let cfg = load_config(config_path, seed)?;
    let resolved = cfg.resolve()?;
    let dir = out_dir(config_path, out);

    let (problem, graph) = match &resolved.problem {
        ResolvedProblem::Standard { problem, graph } => (problem, graph),
        ResolvedProblem::Svm { .. } => {
            return Err(Error::validation(
                "compare supports standard problems, not svm",
            ))
        }
    };
    let compare_cfg = cfg.compare.clone().unwrap_or_default();

    let report = compare_convergence(
        problem,
        graph,
        &resolved.x0,
        &resolved.sim,
        compare_cfg.consensus_tol,
        compare_cfg.xstar_tol,
    )?;

    // paired trajectories for inspection
    let adaptive_traj = simulate(problem, graph, &resolved.x0, &resolved.sim)?;
    let frozen_cfg = SimConfig {
        adaptive: false,
        ..resolved.sim.clone()
    };
    let frozen_traj = simulate(problem, graph, &resolved.x0, &frozen_cfg)?;
    for (name, traj) in [
        ("trajectory_adaptive.csv", &adaptive_traj),
        ("trajectory_nonadaptive.csv", &frozen_traj),
    ] {
        let mut csv = Vec::new();
        traj.write_csv(&mut csv)
            .map_err(|e| Error::validation(format!("CSV write failed: {e}")))?;
        write_file(&dir, name, &csv)?;
    }

    // optional trade-off sweep over uniform gains; members are independent
    // simulations and run concurrently
    let tradeoff: Option<Vec<TradeoffRow>> = match &compare_cfg.sweep_gains {
        None => None,
        Some(gains) => {
            let rows = std::thread::scope(|scope| -> Result<Vec<TradeoffRow>> {
                let mut handles = Vec::new();
                for &gain in gains {
                    let problem = problem.clone();
                    let graph = graph.clone();
                    let x0 = resolved.x0.clone();
                    let sim = resolved.sim.clone();
                    handles.push((
                        gain,
                        scope.spawn(move || -> Result<Trajectory> {
                            // gain 0 is the frozen-weights baseline
                            let (adaptive, mut g) = (gain > 0.0, graph);
                            if gain > 0.0 {
                                g.set_uniform_gains(gain)?;
                            }
                            let member_cfg = SimConfig { adaptive, ..sim };
                            simulate(&problem, &g, &x0, &member_cfg)
                        }),
                    ));
                }
                let mut rows = Vec::new();
                for (gain, handle) in handles {
                    let traj = handle.join().expect("sweep member panicked")?;
                    let last = traj.final_record();
                    rows.push(TradeoffRow {
                        gain,
                        terminal_lambda2: last.lambda2,
                        gain_bound: 1.0 / (problem.mu() + resolved.sim.a_star * last.lambda2),
                        converged: traj.status.converged(),
                    });
                }
                Ok(rows)
            })?;
            Some(rows)
        }
    };

    #[derive(Serialize)]
    struct CompareOutput {
        comparison: adpdd::diagnostics::ComparisonReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        tradeoff: Option<Vec<TradeoffRow>>,
    }
    let out_json = CompareOutput {
        comparison: report,
        tradeoff,
    };
    let json = serde_json::to_vec_pretty(&out_json)
        .map_err(|e| Error::validation(format!("comparison serialization failed: {e}")))?;
    write_file(&dir, "comparison.json", &json)?;
    write_meta(&dir, &cfg, &resolved.label)?;
    Ok(ExitCode::SUCCESS)
}
