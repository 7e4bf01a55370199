use super::{parse_judgment, ChangeDescription, JudgeBackend, JudgeError, Judgment, StateObservation, Trajectory};
use crate::backend::{ChatClient, ChatMessage};

const JUDGE_SYSTEM: &str = "You review how a computer-use agent operated a piece of software. \
You receive the task, the screen description before every action, the action taken, and the final screen. \
First caption what changed after each step, then decide whether the task was completed. \
Finish your reply with one JSON object with the keys \
\"Correctness\" (true/false), \
\"Redundant\" (false, or the 0-based index of the first step from which the remaining steps are unnecessary), \
\"FirstErrorStep\" (null, or the 0-based index of the first step that derailed a failed attempt), \
\"StepCaptions\" (one short caption per step), \
\"Confidence\" (probability in [0, 1] that the task was completed).";

const CHANGE_SYSTEM: &str = "Describe in one or two sentences what visibly changed between two screen \
descriptions of the same application. Mention widgets that appeared, disappeared or changed label.";

/// World-state judge served by a chat-completion endpoint.
pub struct RemoteJudge {
    client: ChatClient,
}

impl RemoteJudge {
    pub fn new(client: ChatClient) -> Self {
        RemoteJudge { client }
    }

    pub fn judge_messages(traj: &Trajectory) -> Vec<ChatMessage> {
        let mut prompt = format!("Task: {}\n\n", traj.task);
        for (i, step) in traj.steps.iter().enumerate() {
            prompt.push_str(&format!(
                "## Step {i}\nScreen:\n{}\nAction: {}\n\n",
                step.observation.caption, step.action
            ));
        }
        prompt.push_str(&format!("## Final screen\n{}\n", traj.final_state.caption));
        vec![ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(prompt)]
    }
}

impl JudgeBackend for RemoteJudge {
    fn judge(&self, traj: &Trajectory) -> Result<Judgment, JudgeError> {
        let reply = self
            .client
            .complete(&Self::judge_messages(traj))
            .map_err(|e| JudgeError::BackendUnavailable(e.to_string()))?;
        parse_judgment(&reply)
    }

    fn describe_change(
        &self,
        before: &StateObservation,
        after: &StateObservation,
    ) -> Result<ChangeDescription, JudgeError> {
        let messages = [
            ChatMessage::system(CHANGE_SYSTEM),
            ChatMessage::user(format!("Before:\n{}\n\nAfter:\n{}", before.caption, after.caption)),
        ];
        let description = self
            .client
            .complete(&messages)
            .map_err(|e| JudgeError::BackendUnavailable(e.to_string()))?;
        Ok(ChangeDescription {
            before_id: before.screen_id.clone(),
            after_id: after.screen_id.clone(),
            description,
        })
    }
}
