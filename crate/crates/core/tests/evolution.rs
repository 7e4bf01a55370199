mod common;

use common::fixture;
use evoforge_core::curriculum::{TaskInstruction, TaskSet};
use evoforge_core::env::{load_env, EnvDefinition, OracleJudge};
use evoforge_core::evolution::{
    distill_generalist, evaluate, load_policy, run_evolution, run_phase, DistillConfig, EnvHandle, EpisodeStatus,
    EvolutionError, RunConfig, TrajectoryRecord,
};
use evoforge_core::judgment::{ChangeDescription, JudgeBackend, JudgeError, Judgment, StateObservation, Trajectory};
use evoforge_core::policy::{ToyPolicy, ToyPolicyConfig};
use std::path::{Path, PathBuf};
use std::sync::Arc;

fn config(name: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(fixture(&format!("{name}.toml"))).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn small(name: &str, out: &Path) -> RunConfig {
    RunConfig {
        tasks_per_phase: 60,
        ..config(name, out)
    }
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn records(path: impl AsRef<Path>) -> Vec<TrajectoryRecord> {
    read(path).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn tasks(texts: &[&str]) -> TaskSet {
    TaskSet {
        phase: 0,
        tasks: texts
            .iter()
            .enumerate()
            .map(|(i, t)| TaskInstruction {
                id: format!("t{i}"),
                text: t.to_string(),
                difficulty_tier: 0,
                source_phase: 0,
            })
            .collect(),
    }
}

fn paint() -> EnvDefinition {
    load_env(fixture("paint-lite.env")).unwrap()
}

#[test]
fn zero_phases_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        phases: 0,
        ..small("paint-lite", dir.path())
    };
    assert!(matches!(run_evolution(&cfg), Err(EvolutionError::Config(_))));
}

#[test]
fn missing_env_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        envs: vec![dir.path().join("nope.env")],
        ..small("paint-lite", dir.path())
    };
    assert!(matches!(run_evolution(&cfg), Err(EvolutionError::EnvLoad { .. })));
}

#[test]
fn one_click_tasks_are_all_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("paint-lite", dir.path());
    let handle = EnvHandle::offline(paint());
    let ts = tasks(&["activate Insert", "activate Format", "activate Save"]);
    let mut policy = ToyPolicy::default();
    let out = run_phase(&cfg, &mut policy, &[(&handle, &ts)], 0, Some(dir.path()), 0).unwrap();
    let r = &out.report;
    assert_eq!(r.episodes, 3);
    assert!(r.successes <= 3);
    assert_eq!(r.successes + r.failures + r.discarded, r.episodes);
    let saved = records(dir.path().join("trajectories.jsonl"));
    assert_eq!(saved.len(), 3);
    assert!(saved.iter().all(|x| x.judgment.is_some() && x.labels.is_some()));
    assert_eq!(out.feedback[0].exam.len(), 3);
}

/// Oracle judge that refuses one task.
struct Flaky {
    inner: OracleJudge,
    refuse: String,
}

impl JudgeBackend for Flaky {
    fn judge(&self, traj: &Trajectory) -> Result<Judgment, JudgeError> {
        if traj.task == self.refuse {
            return Err(JudgeError::InconsistentJudgment("refused".into()));
        }
        self.inner.judge(traj)
    }

    fn describe_change(&self, a: &StateObservation, b: &StateObservation) -> Result<ChangeDescription, JudgeError> {
        self.inner.describe_change(a, b)
    }
}

#[test]
fn judge_and_task_failures_discard_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        heldout_fraction: 0.0,
        ..small("paint-lite", dir.path())
    };
    let env = Arc::new(paint());
    let handle = EnvHandle {
        judge: Arc::new(Flaky {
            inner: OracleJudge::new(env.clone()),
            refuse: "activate Format".into(),
        }),
        curriculum: Arc::new(evoforge_core::curriculum::ScriptedCurriculum::from_env(&env)),
        env,
    };
    let ts = tasks(&["activate Insert", "activate Format", "fly to the moon"]);
    let mut policy = ToyPolicy::default();
    let out = run_phase(&cfg, &mut policy, &[(&handle, &ts)], 0, Some(dir.path()), 0).unwrap();
    assert_eq!(out.report.discarded, 2);
    assert_eq!(out.report.successes + out.report.failures, 1);
    let exam_ids: Vec<&str> = out.feedback[0].exam.iter().map(|e| e.task_id.as_str()).collect();
    assert_eq!(exam_ids, vec!["t0"]);
    let saved = records(dir.path().join("trajectories.jsonl"));
    let discarded: Vec<&TrajectoryRecord> = saved.iter().filter(|r| r.status == EpisodeStatus::Discarded).collect();
    assert_eq!(discarded.len(), 2);
    assert!(discarded.iter().all(|r| r.error.is_some() && r.labels.is_none()));
    // Only the judged episode contributes training items.
    let judged = saved.iter().find(|r| r.task_id == "t0").unwrap();
    let labels = judged.labels.as_ref().unwrap();
    assert_eq!(out.report.positives + out.report.negatives, labels.positive.len() + labels.negative.len());
}

#[test]
fn runs_are_byte_reproducible_and_conserve_episodes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, _) = run_evolution(&small("paint-lite", a.path())).unwrap();
    let (rb, _) = run_evolution(&small("paint-lite", b.path())).unwrap();
    assert_eq!(ra, rb);
    for f in ["metrics.jsonl", "report.json", "policy_v3.json", "tasks_v2.json", "guidebook_v2.txt", "phase_1/trajectories.jsonl"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f} differs");
    }
    for (p, phase) in ra.phases.iter().enumerate() {
        assert_eq!(phase.successes + phase.failures + phase.discarded, phase.episodes);
        let saved = records(a.path().join(format!("phase_{p}/trajectories.jsonl")));
        assert_eq!(saved.len(), phase.episodes);
    }
    let metric_lines = read(a.path().join("metrics.jsonl")).lines().count();
    assert_eq!(metric_lines, ra.phases.iter().map(|p| p.gradient_steps).sum::<usize>());
}

#[test]
fn resume_reproduces_the_interrupted_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("paint-lite", dir.path());
    let (full, _) = run_evolution(&cfg).unwrap();
    let report2 = read(dir.path().join("phase_2/report.json"));
    let metrics = read(dir.path().join("metrics.jsonl"));
    let final_report = read(dir.path().join("report.json"));

    // Simulate a crash during phase 2.
    std::fs::remove_file(dir.path().join("phase_2/report.json")).unwrap();
    std::fs::remove_file(dir.path().join("policy_v3.json")).unwrap();
    std::fs::remove_file(dir.path().join("report.json")).unwrap();
    let (resumed, _) = run_evolution(&cfg).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(read(dir.path().join("phase_2/report.json")), report2);
    assert_eq!(read(dir.path().join("metrics.jsonl")), metrics);
    assert_eq!(read(dir.path().join("report.json")), final_report);

    let other = RunConfig { seed: 99, ..cfg };
    assert!(matches!(run_evolution(&other), Err(EvolutionError::Config(_))));
}

#[test]
fn distillation_needs_successes() {
    let dir = tempfile::tempdir().unwrap();
    let err = distill_generalist(&[dir.path().to_path_buf()], ToyPolicy::default(), &DistillConfig::default()).unwrap_err();
    assert!(matches!(err, EvolutionError::NoSuccessfulTrajectories));
}

#[test]
fn distilled_policy_beats_specialists_across_envs() {
    let root = tempfile::tempdir().unwrap();
    let names = ["paint-lite", "editor-lite"];
    let mut runs: Vec<PathBuf> = Vec::new();
    let mut specialists = Vec::new();
    for n in names {
        let out = root.path().join(n);
        run_evolution(&config(n, &out)).unwrap();
        specialists.push(load_policy(&out.join("policy_v3.json")).unwrap());
        runs.push(out);
    }
    let envs: Vec<EnvDefinition> = names.iter().map(|n| load_env(fixture(&format!("{n}.env"))).unwrap()).collect();
    let base = ToyPolicy::new(ToyPolicyConfig::default());
    let generalist = distill_generalist(&runs, base, &DistillConfig::default()).unwrap();
    for (i, env) in envs.iter().enumerate() {
        let other = &specialists[1 - i];
        let g = evaluate(&generalist, env);
        let s = evaluate(other, env);
        assert!(g >= s, "{}: generalist {g} < other specialist {s}", env.name());
        assert!(g > 0.0);
    }
}
