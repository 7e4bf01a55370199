use evoforge_core::env::load_env;
use std::path::PathBuf;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn fixtures_load_without_warnings() {
    for name in ["paint-lite.env", "editor-lite.env"] {
        let env = load_env(fixture(name)).unwrap();
        assert!(env.warnings().is_empty(), "{name}: {:?}", env.warnings());
        for task in env.tasks() {
            assert!(task.is_playable(), "{name}/{}", task.id);
            assert!(task.features.len() >= 2, "{name}/{}: {:?}", task.id, task.features);
            assert!(task.max_steps <= 20);
        }
    }
}

#[test]
fn paint_lite_shape() {
    let env = load_env(fixture("paint-lite.env")).unwrap();
    assert_eq!(env.screen_count(), 4);
    assert_eq!(env.widget_count(), 9);
    assert_eq!(env.tasks().len(), 12);
    let t = env.task("green_transp_rect").unwrap();
    assert_eq!(t.shortest, Some(6));
    assert_eq!(t.features, vec!["Insert", "Rectangle", "Format", "Green", "Format", "50% Transparency"]);
}

#[test]
fn editor_lite_solutions_replay() {
    let env = load_env(fixture("editor-lite.env")).unwrap();
    for task in env.tasks() {
        let plan = env.solve(task).unwrap();
        let mut st = env.reset(task);
        let mut last = None;
        for a in &plan {
            last = Some(env.step(&mut st, task, a).unwrap());
        }
        assert!(last.unwrap().success, "{}", task.id);
    }
}
