//! File-defined simulated software.
//!
//! An environment is a finite state machine over screens and variables.
//! Widgets on a screen fire transitions when hit by a matching action;
//! typing, key and scroll actions fire transitions through text predicates.
//! Tasks declare a goal over the screen id and variable values, so every
//! episode can be judged exactly by breadth-first search over the state
//! graph.
//!
//! Definition files are JSON:
//!
//! ```json
//! {
//!   "name": "tiny",
//!   "geometry": {"width": 100, "height": 100},
//!   "start": "main",
//!   "variables": {"saved": false},
//!   "screens": [{"id": "main", "widgets": [
//!     {"id": "save", "label": "Save", "kind": "button", "box": [0, 0, 19, 9]}]}],
//!   "transitions": [
//!     {"on": {"screen": "main", "widget": "save", "actions": ["click"]},
//!      "effects": {"saved": true}},
//!     {"on": {"screen": "main", "action": "hotkey", "text": {"equals": "ctrl+s"}},
//!      "effects": {"saved": true}}],
//!   "tasks": [{"id": "t1", "instruction": "Save the file",
//!              "goal": {"vars": {"saved": true}}, "max_steps": 5}]
//! }
//! ```

mod graph;
mod oracle;
mod sim;

pub use graph::StateGraph;
pub use oracle::{oracle_judge, OracleJudge};
pub use sim::EnvState;

use crate::action::{ActionType, BBox, RewardFamily};
use crate::judgment::{JudgeError, StateObservation, WidgetKind};
use crate::reward::ScreenGeometry;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("cannot read environment file {path}: {message}")]
    Io { path: String, message: String },
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("dangling reference at {location}: {message}")]
    DanglingReference { location: String, message: String },
    #[error("episode exhausted after {0} steps")]
    EpisodeExhausted(u32),
    #[error("goal of task `{0}` is not reachable from the start state")]
    GoalUnreachable(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("trajectory does not replay: {0}")]
    ReplayMismatch(String),
}

impl From<EnvError> for JudgeError {
    fn from(e: EnvError) -> Self {
        JudgeError::InvalidTrajectory(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl Value {
    fn same_type(&self, other: &Value) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    pub geometry: ScreenGeometry,
    pub start: String,
    #[serde(default)]
    pub variables: BTreeMap<String, Value>,
    pub screens: Vec<ScreenSpec>,
    pub transitions: Vec<TransitionSpec>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSpec {
    pub id: String,
    pub widgets: Vec<WidgetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidgetSpec {
    pub id: String,
    pub label: String,
    pub kind: WidgetKind,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub on: Trigger,
    #[serde(default)]
    pub effects: BTreeMap<String, Value>,
    /// Target screen; stays on the current screen when absent.
    #[serde(default)]
    pub goto: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trigger {
    Widget(WidgetTrigger),
    Input(InputTrigger),
}

/// Point actions hit when the point lies in the widget box; box actions when
/// the box centre does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidgetTrigger {
    pub screen: String,
    pub widget: String,
    pub actions: Vec<ActionType>,
}

/// Typing, key and scroll actions matched on their payload string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputTrigger {
    pub screen: String,
    pub action: ActionType,
    pub text: TextPredicate,
    /// Widget the input is attributed to, for feature naming.
    #[serde(default)]
    pub widget: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextPredicate {
    Equals(String),
    Contains(String),
    Nonempty,
}

impl TextPredicate {
    pub fn matches(&self, s: &str) -> bool {
        match self {
            TextPredicate::Equals(x) => s == x,
            TextPredicate::Contains(x) => s.contains(x.as_str()),
            TextPredicate::Nonempty => !s.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub goal: GoalSpec,
    pub max_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    #[serde(default)]
    pub screen: Option<String>,
    #[serde(default)]
    pub vars: BTreeMap<String, Value>,
}

// ---------------------------------------------------------------------------
// Compiled definition
// ---------------------------------------------------------------------------

pub const MAX_EPISODE_STEPS: u32 = 20;

#[derive(Debug, Clone)]
pub(crate) struct Screen {
    pub id: String,
    pub widgets: Vec<Widget>,
}

#[derive(Debug, Clone)]
pub(crate) struct Widget {
    pub id: String,
    pub label: String,
    pub kind: WidgetKind,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub(crate) enum CompiledTrigger {
    Widget { widget: usize, actions: Vec<ActionType> },
    Input { action: ActionType, predicate: TextPredicate, widget: Option<usize> },
}

#[derive(Debug, Clone)]
pub(crate) struct Transition {
    pub screen: usize,
    pub trigger: CompiledTrigger,
    pub effects: Vec<(usize, Value)>,
    pub goto: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Goal {
    pub(crate) screen: Option<usize>,
    pub(crate) vars: Vec<(usize, Value)>,
}

/// An executable task: instruction text plus a goal predicate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub max_steps: u32,
    pub goal: Goal,
    /// Labels of the widgets operated along one shortest solution.
    pub features: Vec<String>,
    /// Length of the shortest solution; `None` when unreachable.
    pub shortest: Option<u32>,
}

impl Task {
    /// Whether an episode can both start unsolved and reach the goal in time.
    pub fn is_playable(&self) -> bool {
        matches!(self.shortest, Some(d) if d >= 1 && d <= self.max_steps)
    }
}

#[derive(Debug)]
pub struct EnvDefinition {
    spec: EnvSpec,
    pub(crate) screens: Vec<Screen>,
    pub(crate) start: usize,
    pub(crate) var_names: Vec<String>,
    pub(crate) initial_vars: Vec<Value>,
    pub(crate) transitions: Vec<Transition>,
    tasks: Vec<Task>,
    graph: StateGraph,
    warnings: Vec<String>,
}

/// Reads and validates an environment definition file.
pub fn load_env(path: impl AsRef<Path>) -> Result<EnvDefinition, EnvError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    EnvDefinition::from_json(&text)
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> EnvError {
    EnvError::Schema {
        location: location.into(),
        message: message.into(),
    }
}

fn dangling(location: impl Into<String>, message: impl Into<String>) -> EnvError {
    EnvError::DanglingReference {
        location: location.into(),
        message: message.into(),
    }
}

impl EnvDefinition {
    pub fn from_json(text: &str) -> Result<EnvDefinition, EnvError> {
        let spec: EnvSpec = serde_json::from_str(text)
            .map_err(|e| schema(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
        EnvDefinition::from_spec(spec)
    }

    pub fn from_spec(spec: EnvSpec) -> Result<EnvDefinition, EnvError> {
        let geom = spec.geometry;
        if geom.width == 0 || geom.height == 0 {
            return Err(schema("geometry", "width and height must be at least 1"));
        }

        let mut screen_index = HashMap::new();
        let mut screens = Vec::new();
        for (si, s) in spec.screens.iter().enumerate() {
            if screen_index.insert(s.id.clone(), si).is_some() {
                return Err(schema(format!("screens[{si}].id"), format!("duplicate screen id `{}`", s.id)));
            }
            let mut seen = HashSet::new();
            let mut labels = HashSet::new();
            let mut widgets = Vec::new();
            for (wi, w) in s.widgets.iter().enumerate() {
                let loc = format!("screens[{si}].widgets[{wi}]");
                if !seen.insert(w.id.clone()) {
                    return Err(schema(format!("{loc}.id"), format!("duplicate widget id `{}`", w.id)));
                }
                if !labels.insert(w.label.clone()) {
                    return Err(schema(format!("{loc}.label"), format!("duplicate label `{}` on screen", w.label)));
                }
                if w.label.is_empty() || w.label.contains(['"', '\n']) {
                    return Err(schema(format!("{loc}.label"), "labels must be non-empty single-line text without quotes"));
                }
                let [x1, y1, x2, y2] = w.bbox;
                let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| schema(format!("{loc}.box"), e.to_string()))?;
                if x2 >= geom.width || y2 >= geom.height {
                    return Err(schema(format!("{loc}.box"), "box extends past the screen"));
                }
                widgets.push(Widget {
                    id: w.id.clone(),
                    label: w.label.clone(),
                    kind: w.kind,
                    bbox,
                });
            }
            screens.push(Screen {
                id: s.id.clone(),
                widgets,
            });
        }
        let start = *screen_index
            .get(&spec.start)
            .ok_or_else(|| dangling("start", format!("unknown screen `{}`", spec.start)))?;

        let var_names: Vec<String> = spec.variables.keys().cloned().collect();
        let var_index: HashMap<&str, usize> = var_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let initial_vars: Vec<Value> = spec.variables.values().cloned().collect();

        let compile_assignments = |loc: &str, map: &BTreeMap<String, Value>| -> Result<Vec<(usize, Value)>, EnvError> {
            map.iter()
                .map(|(name, v)| {
                    let i = *var_index
                        .get(name.as_str())
                        .ok_or_else(|| dangling(format!("{loc}.{name}"), format!("undeclared variable `{name}`")))?;
                    if !initial_vars[i].same_type(v) {
                        return Err(schema(format!("{loc}.{name}"), format!("value {v} has a different type than the declaration")));
                    }
                    Ok((i, v.clone()))
                })
                .collect()
        };
        let screen_of = |loc: &str, id: &str| -> Result<usize, EnvError> {
            screen_index
                .get(id)
                .copied()
                .ok_or_else(|| dangling(loc.to_string(), format!("unknown screen `{id}`")))
        };
        let widget_of = |loc: &str, screen: usize, id: &str| -> Result<usize, EnvError> {
            screens[screen]
                .widgets
                .iter()
                .position(|w| w.id == id)
                .ok_or_else(|| dangling(loc.to_string(), format!("no widget `{id}` on screen `{}`", screens[screen].id)))
        };

        let mut transitions = Vec::new();
        let mut widget_kinds_seen: HashSet<(usize, usize, ActionType)> = HashSet::new();
        for (ti, t) in spec.transitions.iter().enumerate() {
            let loc = format!("transitions[{ti}]");
            let (screen, trigger) = match &t.on {
                Trigger::Widget(w) => {
                    let screen = screen_of(&format!("{loc}.on.screen"), &w.screen)?;
                    let widget = widget_of(&format!("{loc}.on.widget"), screen, &w.widget)?;
                    if w.actions.is_empty() {
                        return Err(schema(format!("{loc}.on.actions"), "at least one action kind required"));
                    }
                    for a in &w.actions {
                        if !matches!(a.family(), RewardFamily::Point | RewardFamily::Box) {
                            return Err(schema(format!("{loc}.on.actions"), format!("`{a}` carries no position")));
                        }
                        if !widget_kinds_seen.insert((screen, widget, *a)) {
                            return Err(schema(format!("{loc}.on"), format!("`{a}` on `{}` is shadowed by an earlier transition", w.widget)));
                        }
                    }
                    (
                        screen,
                        CompiledTrigger::Widget {
                            widget,
                            actions: w.actions.clone(),
                        },
                    )
                }
                Trigger::Input(inp) => {
                    let screen = screen_of(&format!("{loc}.on.screen"), &inp.screen)?;
                    if !matches!(
                        inp.action.family(),
                        RewardFamily::Text | RewardFamily::Keys | RewardFamily::Direction
                    ) {
                        return Err(schema(format!("{loc}.on.action"), format!("`{}` carries no text", inp.action)));
                    }
                    let widget = inp
                        .widget
                        .as_deref()
                        .map(|w| widget_of(&format!("{loc}.on.widget"), screen, w))
                        .transpose()?;
                    (
                        screen,
                        CompiledTrigger::Input {
                            action: inp.action,
                            predicate: inp.text.clone(),
                            widget,
                        },
                    )
                }
            };
            let effects = compile_assignments(&format!("{loc}.effects"), &t.effects)?;
            let goto = match &t.goto {
                Some(g) => screen_of(&format!("{loc}.goto"), g)?,
                None => screen,
            };
            transitions.push(Transition {
                screen,
                trigger,
                effects,
                goto,
            });
        }

        // Widgets with positional triggers must not overlap on a screen, so
        // every widget transition can actually be fired.
        for (si, s) in screens.iter().enumerate() {
            let triggered: Vec<usize> = {
                let mut v: Vec<usize> = transitions
                    .iter()
                    .filter(|t| t.screen == si)
                    .filter_map(|t| match t.trigger {
                        CompiledTrigger::Widget { widget, .. } => Some(widget),
                        _ => None,
                    })
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            for (i, &a) in triggered.iter().enumerate() {
                for &b in &triggered[i + 1..] {
                    let (p, q) = (s.widgets[a].bbox, s.widgets[b].bbox);
                    if p.x1 <= q.x2 && q.x1 <= p.x2 && p.y1 <= q.y2 && q.y1 <= p.y2 {
                        return Err(schema(
                            format!("screens[{si}]"),
                            format!("widgets `{}` and `{}` overlap", s.widgets[a].id, s.widgets[b].id),
                        ));
                    }
                }
            }
        }

        let mut def = EnvDefinition {
            spec: spec.clone(),
            screens,
            start,
            var_names: var_names.clone(),
            initial_vars: initial_vars.clone(),
            transitions,
            tasks: Vec::new(),
            graph: StateGraph::default(),
            warnings: Vec::new(),
        };
        def.graph = StateGraph::build(&def);

        let mut task_ids = HashSet::new();
        let mut instructions = HashSet::new();
        for (ti, t) in spec.tasks.iter().enumerate() {
            let loc = format!("tasks[{ti}]");
            if !task_ids.insert(t.id.clone()) {
                return Err(schema(format!("{loc}.id"), format!("duplicate task id `{}`", t.id)));
            }
            if !instructions.insert(t.instruction.clone()) {
                return Err(schema(format!("{loc}.instruction"), "duplicate instruction text"));
            }
            if t.max_steps == 0 || t.max_steps > MAX_EPISODE_STEPS {
                return Err(schema(format!("{loc}.max_steps"), format!("must be within 1..={MAX_EPISODE_STEPS}")));
            }
            let goal = Goal {
                screen: t.goal.screen.as_deref().map(|s| screen_of(&format!("{loc}.goal.screen"), s)).transpose()?,
                vars: compile_assignments(&format!("{loc}.goal.vars"), &t.goal.vars)?,
            };
            let task = def.make_task(t.id.clone(), t.instruction.clone(), goal, t.max_steps);
            match task.shortest {
                None => def.warnings.push(format!("task {}: goal unreachable from start", t.id)),
                Some(0) => def.warnings.push(format!("task {}: goal already holds at start", t.id)),
                Some(d) if d > t.max_steps => def
                    .warnings
                    .push(format!("task {}: needs {d} steps but max_steps is {}", t.id, t.max_steps)),
                _ => {}
            }
            def.tasks.push(task);
        }
        Ok(def)
    }

    fn make_task(&self, id: String, instruction: String, goal: Goal, max_steps: u32) -> Task {
        let dist = self.graph.distances(self, &goal);
        let start = self.graph.start();
        let shortest = dist[start];
        let features = shortest
            .map(|_| {
                self.graph
                    .shortest_path(start, &dist)
                    .into_iter()
                    .map(|t| self.feature_label(t))
                    .collect()
            })
            .unwrap_or_default();
        Task {
            id,
            instruction,
            max_steps,
            goal,
            features,
            shortest,
        }
    }

    fn feature_label(&self, transition: usize) -> String {
        let t = &self.transitions[transition];
        let widgets = &self.screens[t.screen].widgets;
        match &t.trigger {
            CompiledTrigger::Widget { widget, .. } => widgets[*widget].label.clone(),
            CompiledTrigger::Input { widget: Some(w), .. } => widgets[*w].label.clone(),
            CompiledTrigger::Input { action, .. } => action.name().to_string(),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn geometry(&self) -> ScreenGeometry {
        self.spec.geometry
    }

    /// Load-time diagnostics that do not prevent use (e.g. unreachable goals).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Authored task catalogue.
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn screen_count(&self) -> usize {
        self.screens.len()
    }

    pub fn widget_count(&self) -> usize {
        self.screens.iter().map(|s| s.widgets.len()).sum()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    /// What the user sees before acting.
    pub fn start_observation(&self) -> StateObservation {
        self.observe_parts(self.start, &self.initial_vars)
    }

    /// Maps an instruction to an executable task: catalogue instructions
    /// resolve verbatim, and `activate <label>` resolves to reaching the
    /// state that the labelled widget's first transition produces.
    pub fn resolve_task(&self, instruction: &str) -> Option<Task> {
        if let Some(t) = self.tasks.iter().find(|t| t.instruction == instruction) {
            return Some(t.clone());
        }
        let label = instruction.strip_prefix("activate ")?.trim();
        let mut order: Vec<usize> = vec![self.start];
        order.extend((0..self.screens.len()).filter(|&s| s != self.start));
        let (screen, widget) = order.iter().find_map(|&s| {
            self.screens[s]
                .widgets
                .iter()
                .position(|w| w.label == label)
                .map(|w| (s, w))
        })?;
        let transition = self.transitions.iter().find(|t| {
            t.screen == screen
                && match t.trigger {
                    CompiledTrigger::Widget { widget: w, .. } => w == widget,
                    CompiledTrigger::Input { widget: w, .. } => w == Some(widget),
                }
        })?;
        let goal = Goal {
            screen: Some(transition.goto),
            vars: transition.effects.clone(),
        };
        let probe = self.make_task(String::new(), instruction.to_string(), goal.clone(), MAX_EPISODE_STEPS);
        let d = probe.shortest.filter(|d| *d >= 1)?;
        let max_steps = (2 * d + 4).min(MAX_EPISODE_STEPS);
        Some(Task {
            id: format!("activate:{}:{}", self.screens[screen].id, self.screens[screen].widgets[widget].id),
            max_steps,
            ..probe
        })
    }

    pub(crate) fn goal_holds(&self, goal: &Goal, screen: usize, vars: &[Value]) -> bool {
        goal.screen.map_or(true, |s| s == screen) && goal.vars.iter().all(|(i, v)| &vars[*i] == v)
    }
}
