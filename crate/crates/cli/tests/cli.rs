use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn evoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evoforge"))
        .args(args)
        .env_remove("EVOFORGE_BACKEND_URL")
        .env_remove("EVOFORGE_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Small paint-lite config pointing at the fixture env by absolute path.
fn small_config(dir: &Path, phases: usize) -> PathBuf {
    let env = fixture("paint-lite.env");
    let text = format!(
        "phases = {phases}\ntasks_per_phase = 120\nlr = 3.0\nepochs = 2\nsample_temperature = 0.5\n\
         envs = [{:?}]\nout_dir = \"run\"\n\n[judge]\nkind = \"oracle\"\n\n[curriculum]\nkind = \"scripted\"\n",
        env.display().to_string()
    );
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn reward_prints_the_breakdown() {
    let o = evoforge(&["reward", "--pred", "wait()", "--ref", "wait()", "--geom", "100x100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("total 2.000000"));

    let o = evoforge(&[
        "--json", "reward", "--pred", "click(point=(10,10))", "--ref", "click(point=(20,10))", "--geom", "100x100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["total"].as_f64().unwrap() - 1.95).abs() < 1e-9);
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    assert_eq!(evoforge(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(evoforge(&["run", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(2));
    assert_eq!(evoforge(&["reward", "--pred", "wait()", "--ref", "wait()", "--geom", "wide"]).status.code(), Some(2));
    assert_eq!(evoforge(&["validate-env", "/nonexistent.env"]).status.code(), Some(2));
}

#[test]
fn validate_env_summarizes() {
    let o = evoforge(&["--json", "validate-env", fixture("paint-lite.env").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["name"], "paint-lite");
    assert_eq!(v["tasks"], 12);
}

#[test]
fn run_then_inspect_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    let out = dir.path().join("a");
    let o = evoforge(&["--json", "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["phases"].as_array().unwrap().len(), 2);
    for f in ["config.toml", "entry.json", "metrics.jsonl", "report.json", "policy_v2.json", "phase_1/trajectories.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    // Same config in a fresh directory gives identical output.
    let again = dir.path().join("b");
    let o2 = evoforge(&["--json", "run", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(stdout(&o), stdout(&o2));

    let traj = out.join("phase_0/trajectories.jsonl");
    let o = evoforge(&["--json", "inspect", "--traj", traj.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(!rows.is_empty());
    let id = rows[0]["episode_id"].as_str().unwrap();
    let o = evoforge(&["inspect", "--traj", traj.to_str().unwrap(), "--episode", id]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with(&format!("episode {id}")));
    assert_eq!(evoforge(&["inspect", "--traj", traj.to_str().unwrap(), "--episode", "missing"]).status.code(), Some(1));

    // Trajectory records double as judge predictions and ground truth.
    let csv = dir.path().join("curve.csv");
    let o = evoforge(&[
        "--json", "bench-judge", "--pred", traj.to_str().unwrap(), "--gt", traj.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(reports[0]["unmatched"], 0);
    // The oracle judge agrees with the environment, so nothing is misclassified.
    assert_eq!(reports[0]["confusion"]["fp"], 0);
    assert_eq!(reports[0]["confusion"]["fn"], 0);
    assert!(std::fs::read_to_string(csv).unwrap().lines().count() >= 2);
}

#[test]
fn expect_success_fails_with_acceptance_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let out = dir.path().join("run");
    let o = evoforge(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--expect-success", "1.01"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("below"));
}

#[test]
fn bench_judge_reads_flat_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gt = dir.path().join("gt.jsonl");
    std::fs::write(
        &pred,
        "{\"episode_id\":\"a\",\"correctness\":true,\"confidence\":0.9}\n\
         {\"episode_id\":\"b\",\"correctness\":true,\"confidence\":0.4}\n\
         {\"episode_id\":\"c\",\"correctness\":false,\"confidence\":0.2}\n",
    )
    .unwrap();
    std::fs::write(&gt, "{\"episode_id\":\"a\",\"success\":true}\n{\"episode_id\":\"b\",\"success\":false}\n{\"episode_id\":\"c\",\"success\":false}\n").unwrap();
    let o = evoforge(&["--json", "bench-judge", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["confusion"], serde_json::json!({"tp": 1, "fp": 1, "tn": 1, "fn": 0}));
    assert_eq!(v[0]["precision"], 0.5);
    assert_eq!(v[0]["npv"], 1.0);
    assert_eq!(v[0]["average_precision"], 1.0);
}
