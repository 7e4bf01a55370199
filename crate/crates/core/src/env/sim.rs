use super::{CompiledTrigger, EnvDefinition, EnvError, Task, Value};
use crate::action::{Action, Payload, Point};
use crate::judgment::{StateObservation, WidgetObservation};
use serde::{Deserialize, Serialize};

/// Mutable episode state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub screen: usize,
    pub vars: Vec<Value>,
    pub steps: u32,
    pub max_steps: u32,
    pub done: bool,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    /// Index of the transition that fired, if any.
    pub fired: Option<usize>,
    pub done: bool,
    pub success: bool,
}

impl EnvDefinition {
    pub fn reset(&self, task: &Task) -> EnvState {
        EnvState {
            screen: self.start,
            vars: self.initial_vars.clone(),
            steps: 0,
            max_steps: task.max_steps,
            done: false,
        }
    }

    /// The transition `action` fires on `screen`: the first one in file
    /// order whose trigger matches.
    pub fn fire(&self, screen: usize, action: &Action) -> Option<usize> {
        let widgets = &self.screens[screen].widgets;
        self.transitions.iter().position(|t| {
            t.screen == screen
                && match &t.trigger {
                    CompiledTrigger::Widget { widget, actions } => {
                        actions.contains(&action.kind())
                            && hit_point(action).is_some_and(|p| widgets[*widget].bbox.contains(p))
                    }
                    CompiledTrigger::Input { action: kind, predicate, .. } => {
                        *kind == action.kind()
                            && action.payload_text().is_some_and(|s| predicate.matches(&s))
                    }
                }
        })
    }

    pub(crate) fn apply(&self, transition: usize, vars: &mut [Value]) -> usize {
        let t = &self.transitions[transition];
        for (i, v) in &t.effects {
            vars[*i] = v.clone();
        }
        t.goto
    }

    /// Advances the episode. `finished` ends it; otherwise the episode ends
    /// when the goal holds or the step budget is spent.
    pub fn step(&self, state: &mut EnvState, task: &Task, action: &Action) -> Result<StepOutcome, EnvError> {
        if state.done || state.steps >= state.max_steps {
            return Err(EnvError::EpisodeExhausted(state.steps));
        }
        state.steps += 1;
        let mut fired = None;
        if action.kind() != crate::action::ActionType::Finished {
            fired = self.fire(state.screen, action);
            if let Some(t) = fired {
                state.screen = self.apply(t, &mut state.vars);
            }
        }
        let success = self.goal_holds(&task.goal, state.screen, &state.vars);
        state.done = success
            || action.kind() == crate::action::ActionType::Finished
            || state.steps >= state.max_steps;
        Ok(StepOutcome {
            fired,
            done: state.done,
            success,
        })
    }

    pub fn is_success(&self, state: &EnvState, task: &Task) -> bool {
        self.goal_holds(&task.goal, state.screen, &state.vars)
    }

    pub fn observe(&self, state: &EnvState) -> StateObservation {
        self.observe_parts(state.screen, &state.vars)
    }

    pub(crate) fn observe_parts(&self, screen: usize, vars: &[Value]) -> StateObservation {
        let s = &self.screens[screen];
        let mut caption = format!("screen: {}\n", s.id);
        let widgets: Vec<WidgetObservation> = s
            .widgets
            .iter()
            .map(|w| {
                let b = w.bbox;
                caption.push_str(&format!(
                    "{} \"{}\" at [{},{},{},{}]\n",
                    w.kind.name(),
                    w.label,
                    b.x1,
                    b.y1,
                    b.x2,
                    b.y2
                ));
                WidgetObservation {
                    id: w.id.clone(),
                    label: w.label.clone(),
                    kind: w.kind,
                    bbox: w.bbox,
                }
            })
            .collect();
        for (name, v) in self.var_names.iter().zip(vars) {
            caption.push_str(&format!("var {name} = {v}\n"));
        }
        StateObservation {
            screen_id: s.id.clone(),
            caption,
            widgets,
        }
    }
}

fn hit_point(action: &Action) -> Option<Point> {
    match action.payload() {
        Payload::Point(p) => Some(*p),
        Payload::Box(b) => Some(b.center()),
        _ => None,
    }
}
