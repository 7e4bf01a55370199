use super::graph::witness;
use super::{EnvDefinition, EnvError, Task};
use crate::action::{Action, ActionType};
use crate::judgment::{
    diff_observations, ChangeDescription, JudgeBackend, JudgeError, Judgment, StateObservation, Trajectory,
};
use std::sync::Arc;

impl EnvDefinition {
    /// One shortest action sequence solving `task`, built from transition witnesses.
    pub fn solve(&self, task: &Task) -> Option<Vec<Action>> {
        let dist = self.graph().distances(self, &task.goal);
        dist[self.graph().start()]?;
        self.graph()
            .shortest_path(self.graph().start(), &dist)
            .into_iter()
            .map(|t| witness(self, t))
            .collect()
    }
}

/// Exact verdict by replaying the trajectory against the state graph.
///
/// A step makes progress when it lowers the distance to the goal by one.
/// Success means the final state satisfies the goal; redundancy starts at the
/// first step that made no progress. A failure is blamed on the first step
/// that made no progress, or on the last step if every step did.
pub fn oracle_judge(env: &EnvDefinition, traj: &Trajectory) -> Result<Judgment, JudgeError> {
    if traj.steps.is_empty() {
        return Err(JudgeError::InvalidTrajectory("trajectory has no steps".into()));
    }
    let task = env
        .resolve_task(&traj.task)
        .ok_or_else(|| EnvError::UnknownTask(traj.task.clone()))?;
    let graph = env.graph();
    let dist = graph.distances(env, &task.goal);
    let mut state = env.reset(&task);
    let mut node = graph.start();
    if dist[node].is_none() {
        return Err(EnvError::GoalUnreachable(task.id.clone()).into());
    }

    let mut first_stall = None;
    let mut captions = Vec::with_capacity(traj.steps.len());
    for (i, step) in traj.steps.iter().enumerate() {
        let before = env.observe(&state);
        if before.screen_id != step.observation.screen_id {
            return Err(EnvError::ReplayMismatch(format!(
                "step {i} observed screen `{}` but replay is on `{}`",
                step.observation.screen_id, before.screen_id
            ))
            .into());
        }
        if step.action.kind() != ActionType::Finished {
            if let Some(t) = env.fire(state.screen, &step.action) {
                state.screen = env.apply(t, &mut state.vars);
            }
        }
        let next = graph
            .state_index(state.screen, &state.vars)
            .expect("replayed states are reachable");
        let progressed = matches!((dist[node], dist[next]), (Some(a), Some(b)) if b + 1 == a);
        if !progressed && first_stall.is_none() {
            first_stall = Some(i);
        }
        captions.push(diff_observations(&before, &env.observe(&state)).description);
        node = next;
    }

    let success = env.is_success(&state, &task);
    let n = traj.steps.len();
    let mut j = if success {
        Judgment {
            redundant_from: first_stall,
            confidence: Some(1.0),
            rationale: format!("goal reached after {n} step(s)"),
            ..Judgment::success()
        }
    } else {
        let e = first_stall.unwrap_or(n - 1);
        Judgment {
            confidence: Some(0.0),
            rationale: format!(
                "goal not reached; {} step(s) from the goal at the end, first error at step {e}",
                dist[node].map_or("unbounded".to_string(), |d| d.to_string())
            ),
            ..Judgment::failure(e)
        }
    };
    j.step_captions = captions;
    Ok(j)
}

/// Ground-truth judge for one simulated environment.
#[derive(Clone)]
pub struct OracleJudge {
    env: Arc<EnvDefinition>,
}

impl OracleJudge {
    pub fn new(env: Arc<EnvDefinition>) -> Self {
        OracleJudge { env }
    }
}

impl JudgeBackend for OracleJudge {
    fn judge(&self, traj: &Trajectory) -> Result<Judgment, JudgeError> {
        oracle_judge(&self.env, traj)
    }

    fn describe_change(
        &self,
        before: &StateObservation,
        after: &StateObservation,
    ) -> Result<ChangeDescription, JudgeError> {
        Ok(diff_observations(before, after))
    }
}
