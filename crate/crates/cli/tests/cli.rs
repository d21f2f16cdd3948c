use std::path::Path;
use std::process::{Command, Output};

const MODEL: &str =
    r#"{"schema": 1, "family": "normal", "mixing": {"support": [-2.0, 2.0], "weights": [0.5, 0.5]}, "sigma": 1.0}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structmix")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn distance_of_a_file_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, MODEL).unwrap();
    let out = run(&["distance", "--psi1", path(&m), "--psi2", path(&m)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.0");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["sample", "--model", "/nonexistent.json", "-n", "5"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema": 1, "family": "normal", "mixing": {"support": [0.0], "weights": [1.0]}, "sigma": -1.0}"#).unwrap();
    assert_eq!(run(&["certify", "--model", path(&bad), "--order", "2"]).status.code(), Some(1));
}

#[test]
fn certify_prints_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, MODEL).unwrap();
    let out = run(&["certify", "--model", path(&m), "--order", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn sample_fit_distance_compose() {
    let dir = tempfile::tempdir().unwrap();
    let (m, d, f) = (dir.path().join("m.json"), dir.path().join("d.csv"), dir.path().join("f.json"));
    std::fs::write(&m, MODEL).unwrap();
    assert!(run(&["--seed", "3", "sample", "--model", path(&m), "-n", "1500", "--out", path(&d)]).status.success());
    let fit = run(&["--seed", "3", "fit", "--family", "normal", "-m", "2", "--data", path(&d), "--out", path(&f)]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let out = run(&["distance", "--psi1", path(&m), "--psi2", path(&f)]);
    let dist: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(dist > 0.0 && dist < 0.2);
}

#[test]
fn experiment_writes_summary_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let text = format!(
        r#"{{"schema": 1, "true_model": {MODEL}, "fit_order": 2, "n_grid": [40, 80], "replications": 2, "base_seed": 1, "fit_config": {{"restarts": 2}}}}"#
    );
    std::fs::write(&plan, text).unwrap();
    let out = run(&["experiment", "--plan", path(&plan)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("n,median_D"));
    assert_eq!(stdout.lines().count(), 3);
}
