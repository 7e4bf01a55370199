mod common;

use common::fixture;
use evoforge_core::curriculum::{
    cap_descriptions, evolve, init_tasks, ExamResult, Guidebook, PhaseFeedback, ScriptedCurriculum, TaskSet,
    TaskStatus,
};
use evoforge_core::env::load_env;
use evoforge_core::judgment::{diff_observations, ChangeDescription};
use proptest::prelude::*;
use std::collections::HashSet;

fn paint() -> (evoforge_core::env::EnvDefinition, ScriptedCurriculum) {
    let env = load_env(fixture("paint-lite.env")).unwrap();
    let s = ScriptedCurriculum::from_env(&env);
    (env, s)
}

/// Change descriptions from replaying the solution of every task.
fn all_changes(env: &evoforge_core::env::EnvDefinition) -> Vec<ChangeDescription> {
    let mut out = Vec::new();
    for task in env.tasks() {
        let mut state = env.reset(task);
        for a in env.solve(task).unwrap() {
            let before = env.observe(&state);
            env.step(&mut state, task, &a).unwrap();
            out.push(diff_observations(&before, &env.observe(&state)));
        }
    }
    out
}

#[test]
fn seeds_one_activate_task_per_start_button() {
    let (env, s) = paint();
    let (book, tasks) = init_tasks(&[env.start_observation().caption], &s).unwrap();
    let texts: Vec<&str> = tasks.tasks.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(texts, vec!["activate Insert", "activate Format", "activate Save"]);
    assert_eq!(book.entries.len(), 3);
    assert!(tasks.tasks.iter().all(|t| env.resolve_task(&t.text).is_some()));
}

#[test]
fn discovered_features_unlock_catalogue_tasks() {
    let (env, s) = paint();
    let (book, tasks) = init_tasks(&[env.start_observation().caption], &s).unwrap();
    let fb = PhaseFeedback {
        exam: tasks
            .tasks
            .iter()
            .map(|t| ExamResult {
                task_id: t.id.clone(),
                status: TaskStatus::Success,
            })
            .collect(),
        change_descriptions: cap_descriptions(&all_changes(&env), 100),
    };
    let (book2, next) = evolve(&book, &tasks, &fb, &s, 100).unwrap();
    let features: Vec<&str> = book2.entries.iter().map(|e| e.feature.as_str()).collect();
    assert_eq!(features, vec!["Insert", "Format", "Save", "Rectangle", "Ellipse", "Canvas", "Green", "50% Transparency", "OK"]);
    assert_eq!(next.tasks.len(), 100);
    let catalogue: HashSet<&str> = env.tasks().iter().map(|t| t.instruction.as_str()).collect();
    assert!(next.tasks.iter().all(|t| catalogue.contains(t.text.as_str())));
    let distinct: HashSet<&str> = next.tasks.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(distinct.len(), env.tasks().len());
}

#[test]
fn files_round_trip() {
    let (env, s) = paint();
    let (book, tasks) = init_tasks(&[env.start_observation().caption], &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    book.save(dir.path().join("g.txt")).unwrap();
    tasks.save(dir.path().join("t.json")).unwrap();
    assert_eq!(Guidebook::load(dir.path().join("g.txt")).unwrap(), book);
    assert_eq!(TaskSet::load(dir.path().join("t.json"), 0).unwrap(), tasks);
}

fn run_phases(outcomes: &[Vec<bool>], n_tasks: usize) -> Vec<(Guidebook, TaskSet, PhaseFeedback)> {
    let (env, s) = paint();
    let changes = all_changes(&env);
    let (mut book, mut tasks) = init_tasks(&[env.start_observation().caption], &s).unwrap();
    let mut history = Vec::new();
    for (p, outcome) in outcomes.iter().enumerate() {
        let exam: Vec<ExamResult> = tasks
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| ExamResult {
                task_id: t.id.clone(),
                status: if outcome[i % outcome.len()] {
                    TaskStatus::Success
                } else {
                    TaskStatus::Failure
                },
            })
            .collect();
        let fb = PhaseFeedback {
            exam,
            change_descriptions: changes.iter().skip(p * 7).take(7).cloned().collect(),
        };
        let (b2, t2) = evolve(&book, &tasks, &fb, &s, n_tasks).unwrap();
        history.push((book, tasks, fb));
        book = b2;
        tasks = t2;
    }
    history.push((book, tasks, PhaseFeedback::default()));
    history
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curriculum_invariants(
        outcomes in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 1..9), 1..4),
        n_tasks in 1usize..40,
    ) {
        let h = run_phases(&outcomes, n_tasks);
        for w in h.windows(2) {
            let (b0, t0, fb) = &w[0];
            let (b1, t1, _) = &w[1];
            prop_assert!(b1.version > b0.version);
            prop_assert_eq!(&b1.entries[..b0.entries.len()], &b0.entries[..]);
            prop_assert_eq!(t1.tasks.len(), n_tasks);
            let ids: HashSet<&str> = t1.tasks.iter().map(|t| t.id.as_str()).collect();
            prop_assert_eq!(ids.len(), n_tasks);
            let min0 = t0.tasks.iter().map(|t| t.difficulty_tier).min().unwrap();
            let min1 = t1.tasks.iter().map(|t| t.difficulty_tier).min().unwrap();
            prop_assert!(min1 >= min0);
            let failed: Vec<&str> = fb.exam.iter().filter(|r| r.status == TaskStatus::Failure).map(|r| r.task_id.as_str()).collect();
            if failed.len() <= n_tasks {
                for id in failed {
                    prop_assert!(ids.contains(id), "failed task {} was not retried", id);
                    let before = t0.tasks.iter().find(|t| t.id == id).unwrap();
                    let after = t1.tasks.iter().find(|t| t.id == id).unwrap();
                    prop_assert_eq!(&before.text, &after.text);
                }
            }
        }
    }

    #[test]
    fn scripted_backend_is_deterministic(
        outcomes in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 1..9), 1..4),
    ) {
        let a = run_phases(&outcomes, 25);
        let b = run_phases(&outcomes, 25);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.0, &y.0);
            prop_assert_eq!(&x.1, &y.1);
        }
    }

    #[test]
    fn cap_keeps_first_unique(texts in proptest::collection::vec("[a-c]{1,2}", 0..60), cap in 1usize..20) {
        let cds: Vec<ChangeDescription> = texts
            .iter()
            .map(|t| ChangeDescription { before_id: "a".into(), after_id: "b".into(), description: t.clone() })
            .collect();
        let kept = cap_descriptions(&cds, cap);
        let mut expect: Vec<&str> = Vec::new();
        for t in &texts {
            if !expect.contains(&t.as_str()) {
                expect.push(t);
            }
        }
        expect.truncate(cap);
        let got: Vec<&str> = kept.iter().map(|c| c.description.as_str()).collect();
        prop_assert_eq!(got, expect);
    }
}
