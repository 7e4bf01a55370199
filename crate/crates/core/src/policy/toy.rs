use super::grammar::{Decoder, GrammarLimits};
use super::{Gradient, ParamKey, Policy, Prompt};
use crate::action::{tokenize_action, Action, ActionType, TokenId, TokenSequence, Vocabulary};
use crate::judgment::WidgetKind;
use fnv::FnvHasher;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

const MAX_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyPolicyConfig {
    /// Fixed logit bonus steering decoding towards clicking visible
    /// interactive widgets (and typing into fields). Not trained.
    pub prior_bonus: f64,
    pub max_text_len: usize,
    /// Action kinds the policy may emit.
    pub action_kinds: Vec<ActionType>,
    /// Adds a second row per position keyed by the screen alone, shared
    /// between instructions.
    pub shared_rows: bool,
}

impl Default for ToyPolicyConfig {
    fn default() -> Self {
        ToyPolicyConfig {
            prior_bonus: 4.0,
            max_text_len: 8,
            action_kinds: ActionType::ALL.to_vec(),
            shared_rows: false,
        }
    }
}

/// Tabular softmax policy.
///
/// The logit of token `k` at position `t` is
/// `θ[task_row(s, I, t), k] + θ[screen_row(s, t), k] + prior(k)`, masked by
/// the DSL grammar. Rows are keyed by a stable FNV-1a hash of the screen
/// caption (plus the instruction for task rows) and the position; absent
/// rows read as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PolicyFile", from = "PolicyFile")]
pub struct ToyPolicy {
    cfg: ToyPolicyConfig,
    rows: HashMap<u64, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    config: ToyPolicyConfig,
    /// Non-zero entries only.
    rows: BTreeMap<u64, Vec<(u16, f64)>>,
}

impl From<ToyPolicy> for PolicyFile {
    fn from(p: ToyPolicy) -> Self {
        let rows = p
            .rows
            .into_iter()
            .map(|(k, row)| {
                let nz = row
                    .into_iter()
                    .enumerate()
                    .filter(|(_, v)| *v != 0.0)
                    .map(|(i, v)| (i as u16, v))
                    .collect();
                (k, nz)
            })
            .collect();
        PolicyFile { config: p.cfg, rows }
    }
}

impl From<PolicyFile> for ToyPolicy {
    fn from(f: PolicyFile) -> Self {
        let n = Vocabulary::get().len();
        let rows = f
            .rows
            .into_iter()
            .map(|(k, entries)| {
                let mut row = vec![0.0; n];
                for (i, v) in entries {
                    if let Some(slot) = row.get_mut(i as usize) {
                        *slot = v;
                    }
                }
                (k, row)
            })
            .collect();
        ToyPolicy { cfg: f.config, rows }
    }
}

struct Rows {
    task: u64,
    screen: Option<u64>,
}

struct Conditioned<'p> {
    task_base: u64,
    screen_base: u64,
    affordances: Vec<Vec<TokenId>>,
    limits: GrammarLimits,
    policy: &'p ToyPolicy,
}

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
        h.write_u8(0xff);
    }
    h.finish()
}

impl Conditioned<'_> {
    fn rows(&self, pos: usize) -> Rows {
        let at = |base: u64| {
            let mut h = FnvHasher::with_key(base);
            h.write_u32(pos as u32);
            h.finish()
        };
        Rows {
            task: at(self.task_base),
            screen: self.policy.cfg.shared_rows.then(|| at(self.screen_base)),
        }
    }

    fn decoder(&self) -> Decoder<'_> {
        Decoder::new(&self.policy.cfg.action_kinds, self.limits)
    }

    /// Allowed tokens and their logits after `prefix`.
    fn logits(&self, decoder: &Decoder, prefix: &[TokenId]) -> (Vec<TokenId>, Vec<f64>) {
        let allowed = decoder.allowed();
        let rows = self.rows(prefix.len());
        let task = self.policy.rows.get(&rows.task);
        let screen = rows.screen.and_then(|r| self.policy.rows.get(&r));
        let mut bonus: Vec<TokenId> = Vec::new();
        for a in &self.affordances {
            if a.len() > prefix.len() && a[..prefix.len()] == *prefix {
                bonus.push(a[prefix.len()]);
            }
        }
        let logits = allowed
            .iter()
            .map(|t| {
                let i = t.index();
                let mut z = task.map_or(0.0, |r| r[i]) + screen.map_or(0.0, |r| r[i]);
                if bonus.contains(t) {
                    z += self.policy.cfg.prior_bonus;
                }
                z
            })
            .collect();
        (allowed, logits)
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl ToyPolicy {
    pub fn new(cfg: ToyPolicyConfig) -> Self {
        ToyPolicy {
            cfg,
            rows: HashMap::new(),
        }
    }

    pub fn config(&self) -> &ToyPolicyConfig {
        &self.cfg
    }

    /// Number of materialized parameter rows.
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().all(|r| r.iter().all(|v| v.is_finite()))
    }

    fn condition(&self, prompt: &Prompt) -> Conditioned<'_> {
        let caption = prompt.observation.caption.as_bytes();
        let mut affordances = Vec::new();
        for w in &prompt.observation.widgets {
            if !w.kind.is_interactive() {
                continue;
            }
            let c = w.bbox.center();
            if let Ok(a) = Action::point(ActionType::Click, c.x, c.y) {
                if self.cfg.action_kinds.contains(&a.kind()) {
                    affordances.push(tokenize_action(&a).tokens);
                }
            }
            if w.kind == WidgetKind::Field && self.cfg.action_kinds.contains(&ActionType::TypeText) {
                let a = Action::text(ActionType::TypeText, "a").expect("text action");
                let mut t = tokenize_action(&a).tokens;
                // Up to and including the opening quote.
                t.truncate(5);
                affordances.push(t);
            }
        }
        Conditioned {
            task_base: fnv(&[b"task", caption, prompt.instruction.as_bytes()]),
            screen_base: fnv(&[b"screen", caption]),
            affordances,
            limits: GrammarLimits {
                geometry: prompt.geometry,
                max_text_len: self.cfg.max_text_len,
            },
            policy: self,
        }
    }

    fn row_mut(&mut self, row: u64) -> &mut Vec<f64> {
        let n = Vocabulary::get().len();
        self.rows.entry(row).or_insert_with(|| vec![0.0; n])
    }
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy::new(ToyPolicyConfig::default())
    }
}

impl Policy for ToyPolicy {
    fn token_distribution(&self, prompt: &Prompt, prefix: &[TokenId]) -> Vec<f64> {
        let cond = self.condition(prompt);
        let mut dec = cond.decoder();
        for t in prefix {
            dec.push(*t);
        }
        let mut out = vec![0.0; Vocabulary::get().len()];
        let (allowed, logits) = cond.logits(&dec, prefix);
        for (t, p) in allowed.iter().zip(softmax(&logits, 1.0)) {
            out[t.index()] = p;
        }
        out
    }

    fn sample(&self, prompt: &Prompt, n: usize, temperature: f64, rng: &mut dyn RngCore) -> Vec<TokenSequence> {
        let cond = self.condition(prompt);
        (0..n)
            .map(|_| {
                let mut dec = cond.decoder();
                let mut tokens = Vec::new();
                while !dec.is_complete() && tokens.len() < MAX_TOKENS {
                    let (allowed, logits) = cond.logits(&dec, &tokens);
                    let pick = if temperature <= 0.0 {
                        let mut best = 0;
                        for (i, z) in logits.iter().enumerate() {
                            if *z > logits[best] {
                                best = i;
                            }
                        }
                        best
                    } else {
                        let probs = softmax(&logits, temperature);
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut pick = probs.len() - 1;
                        for (i, p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        pick
                    };
                    dec.push(allowed[pick]);
                    tokens.push(allowed[pick]);
                }
                TokenSequence { tokens }
            })
            .collect()
    }

    fn logprobs(&self, prompt: &Prompt, seq: &TokenSequence) -> Vec<f64> {
        let cond = self.condition(prompt);
        let mut dec = cond.decoder();
        let mut out = Vec::with_capacity(seq.len());
        for (pos, t) in seq.tokens.iter().enumerate() {
            let (allowed, logits) = cond.logits(&dec, &seq.tokens[..pos]);
            let lp = match allowed.iter().position(|a| a == t) {
                Some(i) => {
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                    logits[i] - lse
                }
                None => f64::NEG_INFINITY,
            };
            out.push(lp);
            dec.push(*t);
        }
        out
    }

    fn accumulate_logprob_grad(&self, prompt: &Prompt, seq: &TokenSequence, coeffs: &[f64], grad: &mut Gradient) {
        assert_eq!(coeffs.len(), seq.len(), "one coefficient per token");
        let cond = self.condition(prompt);
        let mut dec = cond.decoder();
        for (pos, t) in seq.tokens.iter().enumerate() {
            let c = coeffs[pos];
            let (allowed, logits) = cond.logits(&dec, &seq.tokens[..pos]);
            dec.push(*t);
            if c == 0.0 || !allowed.contains(t) {
                continue;
            }
            let probs = softmax(&logits, 1.0);
            let rows = cond.rows(pos);
            for (a, p) in allowed.iter().zip(&probs) {
                let d = c * (f64::from(u8::from(a == t)) - p);
                grad.add(ParamKey { row: rows.task, token: a.0 }, d);
                if let Some(r) = rows.screen {
                    grad.add(ParamKey { row: r, token: a.0 }, d);
                }
            }
        }
    }

    fn apply_gradient(&mut self, grad: &Gradient, step: f64) {
        for (k, g) in &grad.entries {
            self.row_mut(k.row)[k.token as usize] -= step * g;
        }
    }

    fn param(&self, key: ParamKey) -> f64 {
        self.rows.get(&key.row).map_or(0.0, |r| r[key.token as usize])
    }

    fn set_param(&mut self, key: ParamKey, value: f64) {
        self.row_mut(key.row)[key.token as usize] = value;
    }
}
