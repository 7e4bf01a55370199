use super::{CompiledTrigger, EnvDefinition, Goal, TextPredicate, Value};
use crate::action::{Action, Direction, Payload, Point, RewardFamily};
use std::collections::{HashMap, VecDeque};

/// Reachable `(screen, variables)` states with transition-labelled edges.
#[derive(Debug, Clone, Default)]
pub struct StateGraph {
    states: Vec<(usize, Vec<Value>)>,
    index: HashMap<(usize, Vec<Value>), usize>,
    /// `(target, transition)` per state, in transition order.
    edges: Vec<Vec<(usize, usize)>>,
    reverse: Vec<Vec<usize>>,
}

impl StateGraph {
    pub(crate) fn build(env: &EnvDefinition) -> StateGraph {
        let fireable: Vec<bool> = (0..env.transitions.len()).map(|t| witness(env, t).is_some()).collect();
        let mut g = StateGraph::default();
        let root = (env.start, env.initial_vars.clone());
        g.index.insert(root.clone(), 0);
        g.states.push(root);
        g.edges.push(Vec::new());
        let mut queue = VecDeque::from([0usize]);
        while let Some(s) = queue.pop_front() {
            let (screen, vars) = g.states[s].clone();
            for (ti, t) in env.transitions.iter().enumerate() {
                if t.screen != screen || !fireable[ti] {
                    continue;
                }
                let mut next_vars = vars.clone();
                let next_screen = env.apply(ti, &mut next_vars);
                let key = (next_screen, next_vars);
                let target = match g.index.get(&key) {
                    Some(&i) => i,
                    None => {
                        let i = g.states.len();
                        g.index.insert(key.clone(), i);
                        g.states.push(key);
                        g.edges.push(Vec::new());
                        queue.push_back(i);
                        i
                    }
                };
                g.edges[s].push((target, ti));
            }
        }
        g.reverse = vec![Vec::new(); g.states.len()];
        for (s, out) in g.edges.iter().enumerate() {
            for &(t, _) in out {
                g.reverse[t].push(s);
            }
        }
        g
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_index(&self, screen: usize, vars: &[Value]) -> Option<usize> {
        self.index.get(&(screen, vars.to_vec())).copied()
    }

    pub fn successors(&self, state: usize) -> &[(usize, usize)] {
        &self.edges[state]
    }

    /// Steps from every reachable state to the nearest goal state, via
    /// multi-source BFS on reversed edges. `None` marks dead ends.
    pub fn distances(&self, env: &EnvDefinition, goal: &Goal) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.states.len()];
        let mut queue = VecDeque::new();
        for (i, (screen, vars)) in self.states.iter().enumerate() {
            if env.goal_holds(goal, *screen, vars) {
                dist[i] = Some(0);
                queue.push_back(i);
            }
        }
        while let Some(s) = queue.pop_front() {
            let d = dist[s].expect("queued states have a distance");
            for &p in &self.reverse[s] {
                if dist[p].is_none() {
                    dist[p] = Some(d + 1);
                    queue.push_back(p);
                }
            }
        }
        dist
    }

    /// Transitions along the first shortest path from `from` to a goal state.
    pub fn shortest_path(&self, from: usize, dist: &[Option<u32>]) -> Vec<usize> {
        let mut path = Vec::new();
        let mut s = from;
        while let Some(d) = dist[s].filter(|d| *d > 0) {
            let &(next, t) = self.edges[s]
                .iter()
                .find(|(n, _)| dist[*n] == Some(d - 1))
                .expect("a state at distance d has a successor at d - 1");
            path.push(t);
            s = next;
        }
        path
    }
}

/// A concrete action firing transition `t`, or `None` when no action can
/// (for instance when an earlier transition always wins).
pub fn witness(env: &EnvDefinition, t: usize) -> Option<Action> {
    let tr = &env.transitions[t];
    let action = match &tr.trigger {
        CompiledTrigger::Widget { widget, actions } => {
            let bbox = env.screens[tr.screen].widgets[*widget].bbox;
            let kind = actions[0];
            match kind.family() {
                RewardFamily::Point => Action::new(kind, Payload::Point(bbox.center())).ok()?,
                _ => {
                    let Point { x, y } = bbox.center();
                    Action::bbox(kind, x, y, x, y).ok()?
                }
            }
        }
        CompiledTrigger::Input { action, predicate, .. } => {
            let text = match predicate {
                TextPredicate::Equals(s) | TextPredicate::Contains(s) => s.clone(),
                TextPredicate::Nonempty => match action.family() {
                    RewardFamily::Direction => "down".into(),
                    RewardFamily::Keys => "enter".into(),
                    _ => "a".into(),
                },
            };
            match action.family() {
                RewardFamily::Direction => Action::scroll(Direction::from_name(&text)?),
                RewardFamily::Keys => Action::keys(*action, text).ok()?,
                _ => Action::text(*action, text).ok()?,
            }
        }
    };
    (env.fire(tr.screen, &action) == Some(t)).then_some(action)
}

