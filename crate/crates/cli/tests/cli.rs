//! End-to-end checks of the experiment runner binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segserve"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Short workload so CLI tests stay quick.
fn small_workload(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{
            "events_per_second": 0.3,
            "max_tasks_per_event": 4,
            "trace_pool": [1, 2, 6, 7],
            "agent_count": 12,
            "duration_s": 40.0,
            "seed": 7
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn run_writes_eventlog_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["run", "--workload"])
        .arg(&workload)
        .args(["--policy", "seg-pud", "--seed", "5"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_success(&out);
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.starts_with("policy,wid,task_type,"));
    assert!(metrics.contains("seg-pud,small,"));
    let eventlog = std::fs::read_to_string(dir.path().join("out/eventlog.csv")).unwrap();
    assert!(eventlog.starts_with("time_s,kind,request_id,agent_id,payload"));
}

#[test]
fn run_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    for sub in ["a", "b"] {
        let out = bin()
            .args(["run", "--workload"])
            .arg(&workload)
            .args(["--policy", "seg-pud", "--seed", "9"])
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert_success(&out);
    }
    let a = std::fs::read(dir.path().join("a/eventlog.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/eventlog.csv")).unwrap();
    assert_eq!(a, b);
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_workload_exits_2_with_path() {
    let out = bin()
        .args(["run", "--workload", "/nonexistent/załoga.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("załoga.json"), "{stderr}");
}

#[test]
fn dry_run_echoes_config_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["run", "--workload"])
        .arg(&workload)
        .args(["--dry-run", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"events_per_second\""), "{stdout}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_policy_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["run", "--workload"])
        .arg(&workload)
        .args(["--policy", "lifo"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_emits_ratio_columns() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["compare", "--workload"])
        .arg(&workload)
        .args(["--policy", "seg-pud,fcfs-batch", "--seed", "3"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_success(&out);
    let csv = std::fs::read_to_string(dir.path().join("out/comparison.csv")).unwrap();
    assert!(csv.contains("utility_ratio_seg-pud"));
    assert!(csv.contains("utility_ratio_fcfs-batch"));
    assert!(dir.path().join("out/eventlog_seg-pud.csv").exists());
    assert!(dir.path().join("out/metrics_fcfs-batch.csv").exists());
}

#[test]
fn compare_single_policy_ratios_are_one() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["compare", "--workload"])
        .arg(&workload)
        .args(["--policy", "seg-pud", "--seed", "3"])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_success(&out);
    let csv = std::fs::read_to_string(dir.path().join("out/comparison.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with("1.0000"), "{line}");
    }
}

#[test]
fn sweep_one_row_per_policy_size() {
    let dir = tempfile::tempdir().unwrap();
    let workload = small_workload(dir.path());
    let out = bin()
        .args(["sweep", "--workload"])
        .arg(&workload)
        .args([
            "--policy",
            "seg-pud,fcfs-batch",
            "--batch-sizes",
            "2,4",
            "--adaptive",
            "--seed",
            "3",
        ])
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_success(&out);
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // 2 sizes per policy plus one adaptive row for seg-pud.
    assert_eq!(rows.len(), 5, "{csv}");
    assert!(rows.iter().any(|r| r.starts_with("seg-pud,adaptive,")));
}

#[test]
fn oracle_fixture_set_passes() {
    let out = bin()
        .args(["oracle", "--instances"])
        .arg(repo_config("oracle_fixtures.json"))
        .output()
        .unwrap();
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("hypothesis violated"), "{stdout}");
    assert!(stdout.contains("plateau"), "{stdout}");
    assert!(stdout.contains("skipped"), "{stdout}");
}

#[test]
fn shipped_trace_file_matches_builtin_library() {
    let shipped = std::fs::read_to_string(repo_config("traces.jsonl")).unwrap();
    assert_eq!(shipped, segserve::workload::builtin_library().to_jsonl());
}

#[test]
fn shipped_workload_configs_parse_and_run() {
    for name in ["wid1.json", "wid2.json", "wid3.json", "chatbot.json"] {
        let text = std::fs::read_to_string(repo_config(name)).unwrap();
        let spec: segserve::WorkloadSpec = serde_json::from_str(&text).unwrap();
        spec.validate().unwrap();
    }
    let text = std::fs::read_to_string(repo_config("engine_default.json")).unwrap();
    let engine: segserve::simcore::EngineFileConfig = serde_json::from_str(&text).unwrap();
    engine.cost.validate().unwrap();
}
