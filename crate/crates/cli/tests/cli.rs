use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn metaloop(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metaloop"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn run_into(dir: &Path, condition: &str) -> Value {
    let out = metaloop(&["run", "--condition", condition, "--seed", "3", "--out", dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    json(&out)
}

#[test]
fn run_writes_artifacts_that_replay_and_report_accept() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_into(dir.path(), "full");
    assert_eq!(report["complete"], true);
    assert_eq!(report["condition"], "full");
    let events = dir.path().join("events.jsonl");
    for file in ["events.jsonl", "report.json", "scores.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }

    let out = metaloop(&["replay", "--events", events.to_str().unwrap(), "--assert-invariants"], &[]);
    assert!(out.status.success());
    let replay = json(&out);
    assert_eq!(replay["ok"], true);
    assert_eq!(replay["summary"]["final_generation"], report["generation"]);

    let out = metaloop(&["report", "--in", events.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let metrics = json(&out);
    assert_eq!(metrics["overall_accuracy"], report["metrics"]["overall_accuracy"]);

    let out = metaloop(&["report", "--in", events.to_str().unwrap(), "--out", "csv"], &[]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("task_id,day,round,kind,value,completed"));
    assert_eq!(csv.lines().count(), 1 + 14 * 42);
}

#[test]
fn replay_flags_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), "full");
    let events = dir.path().join("events.jsonl");
    let text = std::fs::read_to_string(&events).unwrap();
    let swap = text.lines().find(|l| l.contains("\"event\":\"hot_swap\"")).unwrap();
    let tampered = text.replacen(swap, &format!("{swap}\n{swap}"), 1);
    let bad = dir.path().join("tampered.jsonl");
    std::fs::write(&bad, tampered).unwrap();

    let out = metaloop(&["replay", "--events", bad.to_str().unwrap(), "--assert-invariants"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["ok"], false);
    let out = metaloop(&["replay", "--events", bad.to_str().unwrap()], &[]);
    assert!(out.status.success());
}

#[test]
fn bench_compare_aggregates_seeds() {
    let out = metaloop(&["bench", "compare", "--seed", "0", "--seeds", "2"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["seeds"], serde_json::json!([0, 1]));
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    let acc = |c: &str| v[c]["overall_accuracy"].as_f64().unwrap();
    assert!(acc("baseline") < acc("skills_only") && acc("skills_only") < acc("full"));
}

#[test]
fn env_overrides_apply_and_bad_ones_fail() {
    let out = metaloop(&["run", "--condition", "baseline"], &[("METALOOP_STREAM__DAYS", "2")]);
    assert!(out.status.success());
    assert_eq!(json(&out)["metrics"]["per_day"].as_array().unwrap().len(), 2);

    let out = metaloop(&["run"], &[("METALOOP_NOT_A_KEY", "1")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(metaloop(&["replay", "--events", "/nonexistent/events.jsonl"], &[]).status.code(), Some(2));
    assert_eq!(metaloop(&["run", "--condition", "sometimes"], &[]).status.code(), Some(2));
    assert_eq!(metaloop(&["bench", "compare", "--seeds", "0"], &[]).status.code(), Some(2));
}
