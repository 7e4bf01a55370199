use crate::action::serialize_action;
use crate::env::{EnvDefinition, EnvError, Task};
use crate::judgment::{Judgment, StateObservation, Step, StepLabels, Trajectory};
use crate::policy::{sample_action, Policy, Prompt};
use crate::reward::ScreenGeometry;
use fnv::FnvHasher;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

/// Stable per-purpose seed derived from the run seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    for p in parts {
        h.write_u64(*p);
    }
    h.finish()
}

pub fn derive_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Plays `task` once. Temperature 0 is greedy.
///
/// Returns the trajectory and whether the environment reports the goal
/// reached.
pub fn rollout<P: Policy + ?Sized>(
    env: &EnvDefinition,
    task: &Task,
    instruction: &str,
    policy: &P,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Step>, StateObservation, bool), EnvError> {
    let mut state = env.reset(task);
    let geometry = env.geometry();
    let mut steps = Vec::with_capacity(task.max_steps as usize);
    loop {
        let observation = env.observe(&state);
        let prompt = Prompt {
            observation: &observation,
            instruction,
            geometry,
        };
        let (action, _) = sample_action(policy, &prompt, temperature, rng);
        let outcome = env.step(&mut state, task, &action)?;
        steps.push(Step { observation, action });
        if outcome.done {
            break;
        }
    }
    let success = env.is_success(&state, task);
    Ok((steps, env.observe(&state), success))
}

/// Greedy success rate over the environment's playable catalogue tasks.
pub fn evaluate<P: Policy + ?Sized>(policy: &P, env: &EnvDefinition) -> f64 {
    let tasks: Vec<&Task> = env.tasks().iter().filter(|t| t.is_playable()).collect();
    if tasks.is_empty() {
        return 0.0;
    }
    let wins = tasks
        .par_iter()
        .filter(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            rollout(env, t, &t.instruction, policy, 0.0, &mut rng).is_ok_and(|(_, _, ok)| ok)
        })
        .count();
    wins as f64 / tasks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failure,
    /// Not judged; excluded from training and from the exam.
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation: StateObservation,
    pub action_text: String,
}

/// One line of `phase_k/trajectories.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: String,
    pub env: String,
    pub task_id: String,
    pub task: String,
    pub phase: usize,
    pub geometry: ScreenGeometry,
    pub heldout: bool,
    pub steps: Vec<StepRecord>,
    pub final_observation: Option<StateObservation>,
    pub status: EpisodeStatus,
    /// Ground truth from the environment, for reporting only.
    pub env_success: bool,
    pub judgment: Option<Judgment>,
    pub labels: Option<StepLabels>,
    pub error: Option<String>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(traj: &Trajectory, env: &str, geometry: ScreenGeometry, heldout: bool, env_success: bool) -> Self {
        TrajectoryRecord {
            episode_id: traj.episode_id.clone(),
            env: env.to_string(),
            task_id: traj.task_id.clone(),
            task: traj.task.clone(),
            phase: traj.phase,
            geometry,
            heldout,
            steps: traj
                .steps
                .iter()
                .map(|s| StepRecord {
                    observation: s.observation.clone(),
                    action_text: serialize_action(&s.action),
                })
                .collect(),
            final_observation: Some(traj.final_state.clone()),
            status: EpisodeStatus::Discarded,
            env_success,
            judgment: None,
            labels: None,
            error: None,
        }
    }
}
