use std::path::Path;
use std::process::{Command, Output};

fn crossnego(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossnego"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("spawn crossnego")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = crossnego(&["run", "--method", "IIGN", "--n-vehicles", "4", "--seed", "2", "--output-dir", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("o/IIGN_n4_s2.csv")).unwrap();
    assert!(summary.starts_with("method,n_vehicles,seed,collided"));
    assert_eq!(summary.lines().count(), 2);
    let trace = std::fs::read_to_string(dir.path().join("o/IIGN_n4_s2.jsonl")).unwrap();
    assert!(trace.lines().next().unwrap().contains("\"type\":\"header\""));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = crossnego(&["run", "--config", "nope.json"], dir.path());
    assert_eq!(code(&missing), 2);
    let bad = write(dir.path(), "bad.json", r#"{"dt": -1.0}"#);
    assert_eq!(code(&crossnego(&["run", "--config", &bad], dir.path())), 2);
    let unknown = write(dir.path(), "unknown.json", r#"{"no_such_field": 1}"#);
    assert_eq!(code(&crossnego(&["run", "--config", &unknown], dir.path())), 2);
    assert_eq!(code(&crossnego(&["run", "--n-vehicles", "0"], dir.path())), 2);
    assert_eq!(code(&crossnego(&["run", "--backend", "fixture"], dir.path())), 2);
}

#[test]
fn llm_backend_without_key_exits_with_three_unless_falling_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "llm.json", r#"{"api_key_env_var": "CROSSNEGO_CLI_TEST_UNSET"}"#);
    let out = crossnego(&["run", "--backend", "llm", "--llm-config", &cfg, "--n-vehicles", "2"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("CROSSNEGO_CLI_TEST_UNSET"));
    let fallback = crossnego(
        &["run", "--backend", "llm", "--llm-config", &cfg, "--llm-fallback", "--n-vehicles", "2"],
        dir.path(),
    );
    assert_eq!(code(&fallback), 0, "{}", String::from_utf8_lossy(&fallback.stderr));
}

#[test]
fn export_writes_each_artifact() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&crossnego(&["run", "--n-vehicles", "4", "--seed", "1", "--output-dir", "."], dir.path())), 0);
    let expected = [
        ("influence", "influence.csv", "time,from,to,direct,cumulative"),
        ("groups", "groups.csv", "time,group,vehicles"),
        ("schedule", "schedule.csv", "time,scope,position,vehicle,target_time,pinned"),
        ("negotiation", "negotiation.jsonl", "{\"event\":"),
    ];
    for (what, file, head) in expected {
        let out = crossnego(&["export", "--trace", "IIGN_n4_s1.jsonl", "--what", what, "--output-dir", "x"], dir.path());
        assert_eq!(code(&out), 0, "{what}: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(dir.path().join("x").join(file)).unwrap();
        assert!(text.starts_with(head), "{what}: {}", text.lines().next().unwrap_or(""));
        assert!(text.lines().count() > 1, "{what} is empty");
    }
}

#[test]
fn export_rejects_unknown_artifacts_and_missing_traces() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&crossnego(&["export", "--trace", "t.jsonl", "--what", "bogus"], dir.path())), 2);
    assert_eq!(code(&crossnego(&["export", "--trace", "t.jsonl", "--what", "groups"], dir.path())), 2);
}

#[test]
fn experiment_on_a_small_grid_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = crossnego(
        &[
            "experiment",
            "--methods",
            "IVD,IIGN",
            "--vehicle-counts",
            "2",
            "--seeds",
            "0,1",
            "--output-dir",
            "grid",
            "--jobs",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let grid = dir.path().join("grid");
    let runs = std::fs::read_to_string(grid.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert!(grid.join("aggregate.csv").exists());
    assert!(grid.join("rounds_by_group_size.csv").exists());
    assert!(grid.join("traces/IVD_n2_s1.jsonl").exists());
    assert!(!grid.join("failures.csv").exists());
}

#[test]
fn experiment_spec_file_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", r#"{"seeds": []}"#);
    assert_eq!(code(&crossnego(&["experiment", "--spec", &spec], dir.path())), 2);
}
