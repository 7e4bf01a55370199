//! World-state judging: trajectory verdicts, step labels and state-change
//! descriptions.

mod remote;

pub use remote::RemoteJudge;

use crate::action::{Action, BBox};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("judge backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed model output: {0}")]
    MalformedModelOutput(String),
    #[error("inconsistent judgment: {0}")]
    InconsistentJudgment(String),
    #[error("step index {index} out of range for trajectory of {len} steps")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("trajectory cannot be judged: {0}")]
    InvalidTrajectory(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    MenuItem,
    Toggle,
    Field,
    Canvas,
    Text,
}

impl WidgetKind {
    pub fn name(self) -> &'static str {
        match self {
            WidgetKind::Button => "button",
            WidgetKind::MenuItem => "menu_item",
            WidgetKind::Toggle => "toggle",
            WidgetKind::Field => "field",
            WidgetKind::Canvas => "canvas",
            WidgetKind::Text => "text",
        }
    }

    pub fn from_name(name: &str) -> Option<WidgetKind> {
        use WidgetKind::*;
        [Button, MenuItem, Toggle, Field, Canvas, Text].into_iter().find(|k| k.name() == name)
    }

    /// Whether a user would expect to operate this widget.
    pub fn is_interactive(self) -> bool {
        !matches!(self, WidgetKind::Canvas | WidgetKind::Text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetObservation {
    pub id: String,
    pub label: String,
    pub kind: WidgetKind,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Textual stand-in for a screenshot: screen id, a dense caption and the
/// visible widgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateObservation {
    pub screen_id: String,
    pub caption: String,
    pub widgets: Vec<WidgetObservation>,
}

impl StateObservation {
    pub fn widget(&self, id: &str) -> Option<&WidgetObservation> {
        self.widgets.iter().find(|w| w.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: StateObservation,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    pub task_id: String,
    /// Instruction text.
    pub task: String,
    pub phase: usize,
    pub steps: Vec<Step>,
    pub final_state: StateObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub correctness: bool,
    pub redundant_from: Option<usize>,
    pub first_error_step: Option<usize>,
    pub step_captions: Vec<String>,
    pub rationale: String,
    /// Judge confidence that the trajectory succeeded, used for ranking metrics.
    pub confidence: Option<f64>,
}

impl Judgment {
    pub fn success() -> Judgment {
        Judgment {
            correctness: true,
            redundant_from: None,
            first_error_step: None,
            step_captions: Vec::new(),
            rationale: String::new(),
            confidence: None,
        }
    }

    pub fn failure(first_error_step: usize) -> Judgment {
        Judgment {
            correctness: false,
            first_error_step: Some(first_error_step),
            ..Judgment::success()
        }
    }

    /// Checks the field invariants, and step indices when the trajectory length is known.
    pub fn validate(&self, n_steps: Option<usize>) -> Result<(), JudgeError> {
        if self.correctness && self.first_error_step.is_some() {
            return Err(JudgeError::InconsistentJudgment(
                "a correct trajectory cannot have a first error step".into(),
            ));
        }
        if !self.correctness && self.first_error_step.is_none() {
            return Err(JudgeError::InconsistentJudgment(
                "a failed trajectory needs a first error step".into(),
            ));
        }
        if !self.correctness && self.redundant_from.is_some() {
            return Err(JudgeError::InconsistentJudgment(
                "redundancy is only reported for correct trajectories".into(),
            ));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(JudgeError::InconsistentJudgment(format!("confidence {c} outside [0, 1]")));
            }
        }
        if let Some(len) = n_steps {
            for index in self.first_error_step.into_iter().chain(self.redundant_from) {
                if index >= len {
                    return Err(JudgeError::IndexOutOfRange { index, len });
                }
            }
        }
        Ok(())
    }

    /// Score used for ranking metrics: the confidence when given, else 1/0.
    pub fn score(&self) -> f64 {
        self.confidence.unwrap_or(if self.correctness { 1.0 } else { 0.0 })
    }
}

/// Partition of step indices into correct (`a_T`), failure (`a_F`) and ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepLabels {
    pub positive: BTreeSet<usize>,
    pub negative: BTreeSet<usize>,
    pub ignored: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeDescription {
    pub before_id: String,
    pub after_id: String,
    pub description: String,
}

pub trait JudgeBackend: Send + Sync {
    fn judge(&self, traj: &Trajectory) -> Result<Judgment, JudgeError>;

    fn describe_change(
        &self,
        before: &StateObservation,
        after: &StateObservation,
    ) -> Result<ChangeDescription, JudgeError>;
}

/// Judges `traj` and enforces the verdict's invariants against its length.
pub fn judge(traj: &Trajectory, backend: &dyn JudgeBackend) -> Result<Judgment, JudgeError> {
    if traj.steps.is_empty() {
        return Err(JudgeError::InvalidTrajectory("trajectory has no steps".into()));
    }
    let j = backend.judge(traj)?;
    j.validate(Some(traj.steps.len()))?;
    Ok(j)
}

/// Labels each step from a verdict:
/// success without redundancy marks every step correct; success with
/// redundancy from `k` marks steps before `k` correct and ignores the rest;
/// failure at `e` marks steps before `e` correct, step `e` as the failure
/// action and ignores the rest.
pub fn label_steps(n_steps: usize, j: &Judgment) -> Result<StepLabels, JudgeError> {
    j.validate(Some(n_steps))?;
    let all = 0..n_steps;
    let mut labels = StepLabels::default();
    match (j.correctness, j.redundant_from, j.first_error_step) {
        (true, None, _) => labels.positive.extend(all),
        (true, Some(k), _) => {
            labels.positive.extend(0..k);
            labels.ignored.extend(k..n_steps);
        }
        (false, _, Some(e)) => {
            labels.positive.extend(0..e);
            labels.negative.insert(e);
            labels.ignored.extend(e + 1..n_steps);
        }
        (false, _, None) => unreachable!("validated above"),
    }
    Ok(labels)
}

/// Extracts the verdict from free-form model text.
///
/// The last well-formed JSON object carrying a `Correctness` key wins.
/// Recognised keys: `Correctness`, `Redundant` (false/null or a step index),
/// `FirstErrorStep`, `StepCaptions`, `Rationale`, `Confidence`.
pub fn parse_judgment(model_text: &str) -> Result<Judgment, JudgeError> {
    let obj = last_json_object(model_text, |o| o.contains_key("Correctness")).ok_or_else(|| {
        JudgeError::MalformedModelOutput("no JSON object with a `Correctness` key".into())
    })?;

    let correctness = match obj.get("Correctness") {
        Some(serde_json::Value::Bool(b)) => *b,
        Some(serde_json::Value::String(s)) if s.eq_ignore_ascii_case("true") => true,
        Some(serde_json::Value::String(s)) if s.eq_ignore_ascii_case("false") => false,
        other => {
            return Err(JudgeError::MalformedModelOutput(format!("bad `Correctness` value {other:?}")))
        }
    };
    let redundant_from = match obj.get("Redundant") {
        None | Some(serde_json::Value::Null) | Some(serde_json::Value::Bool(false)) => None,
        Some(serde_json::Value::Bool(true)) => {
            return Err(JudgeError::InconsistentJudgment(
                "`Redundant` is true but gives no starting step".into(),
            ))
        }
        Some(v) => Some(index_value(v, "Redundant")?),
    };
    let first_error_step = match obj.get("FirstErrorStep") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(index_value(v, "FirstErrorStep")?),
    };
    let step_captions = match obj.get("StepCaptions") {
        None | Some(serde_json::Value::Null) => Vec::new(),
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect(),
        Some(other) => {
            return Err(JudgeError::MalformedModelOutput(format!("`StepCaptions` must be a list, got {other}")))
        }
    };
    let rationale = obj
        .get("Rationale")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let confidence = match obj.get("Confidence") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            v.as_f64()
                .ok_or_else(|| JudgeError::MalformedModelOutput(format!("bad `Confidence` value {v}")))?,
        ),
    };
    let j = Judgment {
        correctness,
        redundant_from,
        first_error_step,
        step_captions,
        rationale,
        confidence,
    };
    j.validate(None)?;
    Ok(j)
}

fn index_value(v: &serde_json::Value, key: &str) -> Result<usize, JudgeError> {
    v.as_u64()
        .map(|i| i as usize)
        .ok_or_else(|| JudgeError::MalformedModelOutput(format!("`{key}` must be a step index, got {v}")))
}

/// Finds the JSON object ending last in `text` (outermost on ties) that
/// satisfies `accept`.
pub(crate) fn last_json_object(
    text: &str,
    accept: impl Fn(&serde_json::Map<String, serde_json::Value>) -> bool,
) -> Option<serde_json::Map<String, serde_json::Value>> {
    let mut best: Option<(usize, serde_json::Map<String, serde_json::Value>)> = None;
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            let end = start + stream.byte_offset();
            if accept(&map) && best.as_ref().map_or(true, |(e, _)| end > *e) {
                best = Some((end, map));
            }
        }
    }
    best.map(|(_, m)| m)
}

/// Deterministic widget-level diff of two observations.
pub fn diff_observations(before: &StateObservation, after: &StateObservation) -> ChangeDescription {
    let mut sentences = Vec::new();
    if before.screen_id != after.screen_id {
        sentences.push(format!("screen changed from {} to {}", before.screen_id, after.screen_id));
    }
    let old: BTreeMap<&str, &WidgetObservation> = before.widgets.iter().map(|w| (w.id.as_str(), w)).collect();
    let new: BTreeMap<&str, &WidgetObservation> = after.widgets.iter().map(|w| (w.id.as_str(), w)).collect();
    for w in &after.widgets {
        match old.get(w.id.as_str()) {
            None => sentences.push(format!("{} \"{}\" appeared", w.kind.name(), w.label)),
            Some(prev) if prev.label != w.label => sentences.push(format!(
                "{} {} relabeled from \"{}\" to \"{}\"",
                w.kind.name(),
                w.id,
                prev.label,
                w.label
            )),
            Some(_) => {}
        }
    }
    for w in &before.widgets {
        if !new.contains_key(w.id.as_str()) {
            sentences.push(format!("{} \"{}\" disappeared", w.kind.name(), w.label));
        }
    }
    let old_lines: BTreeSet<&str> = state_lines(&before.caption).collect();
    for line in state_lines(&after.caption) {
        if !old_lines.contains(line) {
            sentences.push(format!("state now reads `{line}`"));
        }
    }
    let description = if sentences.is_empty() {
        "no visible change".to_string()
    } else {
        sentences.join("; ")
    };
    ChangeDescription {
        before_id: before.screen_id.clone(),
        after_id: after.screen_id.clone(),
        description,
    }
}

fn state_lines(caption: &str) -> impl Iterator<Item = &str> {
    caption.lines().filter(|l| l.starts_with("var "))
}

/// Labels quoted as `"..." appeared` in a change description.
pub fn appeared_labels(description: &str) -> Vec<String> {
    let mut out = Vec::new();
    for part in description.split("; ") {
        if let Some(rest) = part.strip_suffix("\" appeared") {
            if let Some(start) = rest.find('"') {
                out.push(rest[start + 1..].to_string());
            }
        }
    }
    out
}
