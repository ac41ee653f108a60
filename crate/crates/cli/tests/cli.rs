use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn minsnap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minsnap"))
        .args(args)
        .env_remove("MINSNAP_SEED")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn run_example2_reports_commit_set() {
    let out = minsnap(&["run", "--fixture", "example2", "--seed", "7", "--verify"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let committed = &v["verification"]["sessions"][0]["minimality"]["committed_set"];
    assert_eq!(committed, &serde_json::json!([1, 2, 3, 4, 5, 6]));
    assert_eq!(v["verification"]["findings"], serde_json::json!([]));
}

#[test]
fn run_without_verify_omits_findings() {
    let v = json(&minsnap(&["run", "--fixture", "tardy"]));
    assert!(v.get("verification").is_none());
    assert_eq!(v["sessions"][0]["outcome"], "commit");
}

#[test]
fn missing_scenario_is_a_usage_error() {
    assert_eq!(minsnap(&["run", "--scenario", "missing.json"]).status.code(), Some(1));
    assert_eq!(minsnap(&["run"]).status.code(), Some(1));
    assert_eq!(minsnap(&["run", "--fixture", "nope"]).status.code(), Some(1));
}

#[test]
fn out_dir_holds_artifacts_and_replays_clean() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = minsnap(&["run", "--fixture", "disconnect", "--seed", "3", "--verify", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["trace.jsonl", "report.json", "findings.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let trace = dir.path().join("trace.jsonl");
    let replay = minsnap(&["replay", trace.to_str().unwrap(), "--fail-on-finding"]);
    assert_eq!(replay.status.code(), Some(0));
    let original: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json(&replay)["trace_hash"], original["trace_hash"]);
}

#[test]
fn replay_of_corrupted_trace_fails_on_finding() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    minsnap(&["run", "--fixture", "example1", "--seed", "7", "--out", d]);
    let path = dir.path().join("trace.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let cut: String = text
        .lines()
        .filter(|l| !l.contains("\"decided\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&path, cut).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(minsnap(&["replay", p]).status.code(), Some(0));
    let out = minsnap(&["replay", p, "--fail-on-finding"]);
    assert_eq!(out.status.code(), Some(2));
    let codes: Vec<String> = json(&out)["verification"]["findings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["code"].as_str().unwrap().to_string())
        .collect();
    assert!(codes.iter().any(|c| c == "NONTERM"), "{codes:?}");

    fs::write(&path, "not json\n").unwrap();
    assert_eq!(minsnap(&["replay", p]).status.code(), Some(1));
}

#[test]
fn seed_falls_back_to_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_minsnap"))
        .args(["run", "--fixture", "tardy"])
        .env("MINSNAP_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(json(&out)["seed"], 42);
    assert_eq!(json(&minsnap(&["run", "--fixture", "tardy", "--seed", "5"]))["seed"], 5);
}

#[test]
fn fifo_and_timeout_flags_reach_the_simulator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    minsnap(&[
        "run",
        "--fixture",
        "example1",
        "--fifo",
        "--max-timeout",
        "77",
        "--out",
        d,
    ]);
    let first = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let start: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(start["event"]["fifo"], true);
    assert_eq!(start["event"]["max_timeout"], 77);
}

#[test]
fn campaign_is_byte_identical_across_runs() {
    let a = minsnap(&["campaign", "--count", "40", "--seed", "1"]);
    let b = minsnap(&["run", "--campaign", "40", "--seed", "1"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["count"], 40);
    assert_eq!(v["totals"]["ORPHAN"], 0);
}

#[test]
fn csv_format_has_header_and_rows() {
    let out = minsnap(&["run", "--fixture", "abort-negative", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("scenario,seed,initiator"));
    assert_eq!(lines.len(), 2);
    assert!(lines[1].contains(",abort,"));
}
