//! End-to-end runs of the `metalqr` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_metalqr");

fn metalqr(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("METALQR_THREADS", "1").output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let file = dir.join("config.toml");
    fs::write(&file, body).unwrap();
    file.to_str().unwrap().to_string()
}

const SHORT_RUN: &str = "[meta]\nmax_iterations = 6\nnum_perturbations = 10\nhorizon = 20\n";

#[test]
fn unknown_config_field_exits_with_input_status() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[meta]\nlearning_rat = 0.1\n");
    let out = metalqr(&["train", "--config", &config, "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn invalid_value_exits_with_input_status() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[meta]\nradius = -1.0\n");
    let out = metalqr(&["train", "--config", &config, "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("radius"));
}

#[test]
fn unknown_flag_exits_with_input_status() {
    assert_eq!(metalqr(&["train", "--sed", "3"]).status.code(), Some(2));
    assert_eq!(metalqr(&["train", "--preset", "fig9"]).status.code(), Some(2));
}

#[test]
fn corrupted_task_file_exits_with_input_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = metalqr(&["gen-tasks", "--preset", "fig1-d2", "--seed", "3", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let tasks = dir.path().join("tasks.toml");
    let text = fs::read_to_string(&tasks).unwrap();
    fs::write(&tasks, text.replacen("entries = [", "entries = [1.0, ", 1)).unwrap();
    let config = write_config(dir.path(), &format!("tasks_file = \"tasks.toml\"\n{SHORT_RUN}"));
    let out = metalqr(&["train", "--config", &config, "--out", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generated_tasks_round_trip_through_a_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(metalqr(&["gen-tasks", "--preset", "fig1-d2", "--seed", "4", "--out", path(dir.path())]).status.success());
    let generated = fs::read_to_string(dir.path().join("tasks.toml")).unwrap();
    let config = write_config(dir.path(), &format!("tasks_file = \"tasks.toml\"\n{SHORT_RUN}"));
    let run = dir.path().join("run");
    let out = metalqr(&["train", "--config", &config, "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(run.join("tasks.toml")).unwrap(), generated);
}

#[test]
fn manifest_replay_reproduces_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT_RUN);
    let first = dir.path().join("first");
    assert!(metalqr(&["train", "--config", &config, "--preset", "fig1-d1", "--seed", "9", "--out", path(&first)])
        .status
        .success());
    let second = dir.path().join("second");
    let manifest = first.join("manifest.toml");
    let out = metalqr(&["train", "--config", path(&manifest), "--out", path(&second)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = |d: &Path| fs::read(d.join("trace.csv")).unwrap();
    assert_eq!(trace(&first), trace(&second));
    let rows = String::from_utf8(trace(&first)).unwrap();
    assert_eq!(rows.lines().count(), 1 + 7);
    assert!(rows.starts_with("iteration,ratio,meta_grad_norm,gap_0,"));
}

#[test]
fn destabilizing_step_fails_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &format!("{SHORT_RUN}learning_rate = 1e4\n"));
    let out = metalqr(&["train", "--config", &config, "--preset", "fig1-d1", "--seed", "2", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
    assert!(trace.lines().last().unwrap().contains("false"));
}

#[test]
fn exact_mode_records_meta_objective() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SHORT_RUN);
    let out = metalqr(&["train", "--config", &config, "--mode", "exact", "--preset", "fig1-d2", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let header: Vec<&str> = trace.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "meta_objective").unwrap();
    let objective: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert!(objective.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn verify_passes_across_seeds() {
    for seed in ["1", "2", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let out = metalqr(&["verify", "--preset", "fig1-d2", "--seed", seed, "--out", path(dir.path())]);
        assert!(out.status.success(), "seed {seed}: {}", String::from_utf8_lossy(&out.stderr));
        let report = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
        assert!(!report.contains(",fail,"));
    }
}

#[test]
fn diag_reports_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = metalqr(&["diag", "--preset", "fig1-d1", "--seed", "1", "--epsilon", "0.5", "--out", path(dir.path())]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("stable true maml true").count(), 5);
    assert!(stdout.contains("rollout length for epsilon = 0.5"));
    assert!(dir.path().join("diagnostics.csv").exists());
}
