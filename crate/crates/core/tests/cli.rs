use std::fs;
use std::process::{Command, Output};

use dagless::report::RunReport;

fn dagless(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagless"))
        .args(args)
        .env_remove("DAGLESS_TRACE")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn verify_passes_for_every_scheduler() {
    for s in ["decentralized", "centralized-serial", "centralized-pooled"] {
        let o = dagless(&["verify", "--workload", "tsqr:blocks=4,payload=512", "--scheduler", s]);
        assert!(o.status.success(), "{s}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).starts_with("PASS"), "{s}: {}", stdout(&o));
    }
}

#[test]
fn unknown_scheduler_is_rejected() {
    let o = dagless(&["run", "--workload", "tr:n=8", "--scheduler", "round-robin"]);
    assert!(!o.status.success());
    let bad = dagless(&["run", "--workload", "tr:n=7"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dagless(&["run", "--workload", "tr:n=16,delay=5", "--clustering", "off", "--out", out]);
    assert!(o.status.success());
    let report = RunReport::from_json(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.tasks, 15);
    assert!(!report.clustering);
    assert_eq!(report.verified, Some(true));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn trace_env_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dagless"))
        .args(["run", "--workload", "example6", "--out", dir.path().to_str().unwrap()])
        .env("DAGLESS_TRACE", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn export_dag_lists_tasks_and_schedules() {
    let o = dagless(&["export-dag", "--workload", "tr:n=8", "--schedules"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["schedules"].as_array().unwrap().len(), 4);
    assert!(stdout(&o).contains("add-"));
}

#[test]
fn compare_two_reports_and_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, shards) in [(&a, "1"), (&b, "8")] {
        let o = dagless(&["run", "--workload", "tr:n=64", "--shards", shards, "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let o = dagless(&[
        "compare",
        a.join("report.json").to_str().unwrap(),
        b.join("report.json").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("makespan_ms"));

    let o = dagless(&["compare", "--ladder", "--workload", "tr:n=64"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for step in ["baseline", "+clustering", "+delayed-io"] {
        assert!(text.contains(step), "{text}");
    }
}

#[test]
fn config_file_and_set_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "workload = \"gemm:n=8,block=4,seed=3\"\n[engine]\nscheduler = \"centralized-pooled\"\n").unwrap();
    let o = dagless(&["verify", "--config", path.to_str().unwrap(), "--set", "engine.store.shard_count=4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bad = dagless(&["run", "--config", path.to_str().unwrap(), "--set", "engine.store.shard_count=0"]);
    assert_eq!(bad.status.code(), Some(2));
}
