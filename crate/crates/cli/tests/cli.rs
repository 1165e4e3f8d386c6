//! Command-line behaviour of the `nflbench` binary.

use std::path::PathBuf;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "schema": 1,
    "embedding_lattice": {"count": 21, "start": -5.0, "step": 0.5},
    "client": {"prompt": "t10 t11", "embedding_var": [0.5]},
    "grid": [
        {"mechanism": "identity"},
        {"mechanism": "gaussian", "sigma_eps": 0.5},
        {"mechanism": "gaussian", "sigma_eps": 1.5}
    ],
    "attacker": {"kind": "calibrated", "iterations": 128, "p": 0.5, "scale": 1.0},
    "mock_llm": [{"prompt": "t10", "response": "t0 t1"}],
    "n_samples": 300,
    "seed": 3
}"#;

fn nflbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nflbench")).args(args).output().unwrap()
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn sweep_writes_csv_and_json_that_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let (csv, json, back) = (dir.path().join("a.csv"), dir.path().join("a.json"), dir.path().join("b.csv"));
    let out = nflbench(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("mech,param,"));
    let out = nflbench(&["export", "--input", json.to_str().unwrap(), "--format", "csv", "--out", back.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&back).unwrap(), text);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let run = |seed: &str| {
        let out = nflbench(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("11"), run("11"));
    assert_ne!(run("11"), run("12"));
}

#[test]
fn protect_reports_the_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let out = nflbench(&["protect", "--config", cfg.to_str().unwrap(), "--point", "0"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["original"], "t10 t11");
    assert_eq!(v["protected"], "t10 t11");
    assert_eq!(v["response"], "t0 t1");
    assert_eq!(v["steps"].as_array().unwrap().len(), 4);
}

#[test]
fn attack_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let trace = dir.path().join("trace.csv");
    let out = nflbench(&["attack", "--config", cfg.to_str().unwrap(), "--point", "1", "--out", trace.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().next(), Some("iter,mean_regret,cumulative"));
    assert_eq!(text.lines().count(), 129);
    assert!(String::from_utf8_lossy(&out.stderr).contains("R = "));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, SMALL);
    let report = dir.path().join("report.json");
    let out = nflbench(&["verify-nfl", "--config", cfg.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["points"].as_array().unwrap().len(), 3);

    let faulty = SMALL.replace(r#""seed": 3"#, r#""seed": 3, "fault_injection": {"c1_override": 50.0}"#);
    let cfg = write_config(&dir, &faulty);
    assert_eq!(nflbench(&["verify-nfl", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));

    let nn = SMALL.replace(r#""kind": "calibrated""#, r#""kind": "nearest_neighbor""#);
    let cfg = write_config(&dir, &nn);
    assert_eq!(nflbench(&["verify-nfl", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn bad_input_exits_two() {
    assert_eq!(nflbench(&["sweep", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &SMALL.replace(r#""n_samples": 300"#, r#""n_samples": 10"#));
    let out = nflbench(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
