//! End-to-end checks of the binary: exit codes, output files, byte-level
//! determinism, and the comparison outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adpdd"))
}

fn workspace_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_example1_converges_with_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(workspace_config("example1.toml"))
        .arg("--out")
        .arg(tmp.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in ["trajectory.csv", "report.json", "meta.json"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap())
            .unwrap();
    assert!(report["status"]["Converged"]["t"].as_f64().unwrap() > 0.0);
    let final_kkt = &report["report"]["final_kkt"];
    assert!(final_kkt["consensus"].as_f64().unwrap() < 1e-5);
}

#[test]
fn parse_error_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[problem\nbuiltin = \"example1\"");
    let status = bin().args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn invalid_dt_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[problem]\nbuiltin = \"example1\"\n[sim]\ndt = -1.0\n",
    );
    let status = bin().args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn horizon_without_convergence_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
seed = 42
[problem]
builtin = "example2"
[sim]
dt = 1e-4
t_end = 0.05
record_every = 10
"#,
    );
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn same_seed_is_byte_identical_and_seed_override_changes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
seed = 7
[problem]
builtin = "example1"
[graph]
gains = 0.3
[sim]
dt = 1e-3
t_end = 5.0
record_every = 10
kkt_tol = 1e-12
"#,
    );
    let run = |out: &Path, seed: Option<&str>| {
        let mut cmd = bin();
        cmd.args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out);
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        let status = cmd.status().unwrap();
        assert!(status.code() == Some(0) || status.code() == Some(2));
        std::fs::read(out.join("trajectory.csv")).unwrap()
    };
    let a = run(&tmp.path().join("a"), None);
    let b = run(&tmp.path().join("b"), None);
    assert_eq!(a, b, "same config and seed must be byte-identical");
    let c = run(&tmp.path().join("c"), Some("8"));
    assert_ne!(a, c, "a different seed must change the trajectory");
}

#[test]
fn disturbed_run_reports_the_gain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
seed = 11
[problem.inline]
l = 1
[[problem.inline.agents]]
p = [[2.0]]
r = [-2.0]
s = 1.0
[[problem.inline.agents]]
p = [[2.0]]
r = [2.0]
s = 1.0
[graph]
n = 2
edges = [[1, 2]]
gains = 0.05
[x0]
mode = "explicit"
values = [2.0, -2.0]
[sim]
dt = 1e-3
t_end = 8.0
record_every = 2
kkt_tol = 1e-12
[disturbance]
target = "H1"
signal = "sinusoid"
amplitude = 0.5
frequency = 20.0
window = [4.0, 8.0]
"#,
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.code() == Some(0) || status.code() == Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let gain = &report["gain"];
    assert!(gain["empirical_gain"].as_f64().unwrap() >= 0.0);
    assert!(gain["bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn compare_emits_paired_trajectories_and_tradeoff() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
seed = 5
[problem.inline]
l = 1
[[problem.inline.agents]]
p = [[2.0]]
r = [-2.0]
s = 1.0
[[problem.inline.agents]]
p = [[2.0]]
r = [2.0]
s = 1.0
[graph]
n = 2
edges = [[1, 2]]
gains = 0.05
[x0]
mode = "explicit"
values = [3.0, -3.0]
[sim]
dt = 1e-3
t_end = 30.0
record_every = 10
kkt_tol = 1e-12
[compare]
consensus_tol = 1e-4
xstar_tol = 1e-3
sweep_gains = [0.0, 0.01, 0.05]
"#,
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("trajectory_adaptive.csv").exists());
    assert!(out.join("trajectory_nonadaptive.csv").exists());
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(
        cmp["comparison"]["adaptive_not_slower"],
        serde_json::Value::Bool(true)
    );
    let rows = cmp["tradeoff"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // terminal λ₂ nondecreasing and the gain bound nonincreasing in the gain
    let lambdas: Vec<f64> = rows
        .iter()
        .map(|r| r["terminal_lambda2"].as_f64().unwrap())
        .collect();
    let bounds: Vec<f64> = rows
        .iter()
        .map(|r| r["gain_bound"].as_f64().unwrap())
        .collect();
    assert!(
        lambdas.windows(2).all(|w| w[1] >= w[0] - 1e-12),
        "{lambdas:?}"
    );
    assert!(
        bounds.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        "{bounds:?}"
    );
}

#[test]
fn zero_gain_comparison_sets_the_identical_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
seed = 5
[problem.inline]
l = 1
[[problem.inline.agents]]
p = [[2.0]]
r = [-2.0]
s = 1.0
[[problem.inline.agents]]
p = [[2.0]]
r = [2.0]
s = 1.0
[graph]
n = 2
edges = [[1, 2]]
gains = 1e-15
[x0]
mode = "explicit"
values = [0.0, 4.0]
[sim]
dt = 1e-3
t_end = 10.0
record_every = 10
kkt_tol = 1e-12
"#,
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(
        cmp["comparison"]["trajectories_identical"],
        serde_json::Value::Bool(true)
    );
}

#[test]
fn svm_run_reports_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(workspace_config("svm.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["training_accuracy"].as_f64().unwrap(), 1.0);
}

#[test]
fn svm_data_file_round_robin_ingestion() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    std::fs::write(&data, "+1,1.0,0.0\n-1,-1.0,0.0\n+1,0.9,0.1\n-1,-0.9,-0.1\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"
seed = 3
[problem]
builtin = "svm"
data = "{}"
[graph]
n = 2
edges = [[1, 2]]
gains = 0.5
[sim]
dt = 1e-3
t_end = 40.0
record_every = 100
kkt_tol = 1e-6
"#,
            data.display()
        ),
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(
        status.code() == Some(0) || status.code() == Some(2),
        "{status:?}"
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["training_accuracy"].as_f64().unwrap(), 1.0);
}

/// The published two-setting connectivity ratio, through the CLI sweep.
#[test]
fn ratio_config_shows_two_orders_of_magnitude() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args(["compare", "--config"])
        .arg(workspace_config("example2_ratio.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let cmp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap())
            .unwrap();
    let rows = cmp["tradeoff"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let small = rows[0]["terminal_lambda2"].as_f64().unwrap();
    let large = rows[1]["terminal_lambda2"].as_f64().unwrap();
    assert!(
        large >= 100.0 * small,
        "lambda2 ratio {:.1} below 100 ({} vs {})",
        large / small,
        small,
        large
    );
}
