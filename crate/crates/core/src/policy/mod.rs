//! Pluggable action policies over the DSL token vocabulary.

pub mod grammar;
mod toy;

pub use toy::{ToyPolicy, ToyPolicyConfig};

use crate::action::{detokenize, parse_action, Action, TokenId, TokenSequence};
use crate::judgment::StateObservation;
use crate::reward::ScreenGeometry;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Conditioning input of a policy: what is on screen and what to do.
#[derive(Debug, Clone, Copy)]
pub struct Prompt<'a> {
    pub observation: &'a StateObservation,
    pub instruction: &'a str,
    pub geometry: ScreenGeometry,
}

/// Address of one scalar parameter: a table row and a vocabulary column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamKey {
    pub row: u64,
    pub token: u16,
}

/// Sparse gradient over parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub entries: HashMap<ParamKey, f64>,
}

impl Gradient {
    pub fn add(&mut self, key: ParamKey, v: f64) {
        *self.entries.entry(key).or_insert(0.0) += v;
    }

    pub fn merge(&mut self, other: &Gradient) {
        // Sorted so that floating-point accumulation order is reproducible.
        let mut keys: Vec<&ParamKey> = other.entries.keys().collect();
        keys.sort_unstable();
        for k in keys {
            self.add(*k, other.entries[k]);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.entries.values_mut() {
            *v *= s;
        }
    }

    pub fn get(&self, key: ParamKey) -> f64 {
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Contract shared by trainable policies.
///
/// Per-token distributions are normalized over the whole vocabulary; tokens
/// a policy never emits have probability zero.
pub trait Policy: Send + Sync {
    /// Probability of every vocabulary token following `prefix`.
    fn token_distribution(&self, prompt: &Prompt, prefix: &[TokenId]) -> Vec<f64>;

    /// Draws `n` complete sequences. Temperature 0 is greedy and deterministic.
    fn sample(&self, prompt: &Prompt, n: usize, temperature: f64, rng: &mut dyn RngCore) -> Vec<TokenSequence>;

    /// Per-token natural-log probabilities at temperature 1.
    fn logprobs(&self, prompt: &Prompt, seq: &TokenSequence) -> Vec<f64>;

    /// Adds `Σ_t coeffs[t] · ∂ log π(seq_t) / ∂θ` into `grad`.
    fn accumulate_logprob_grad(&self, prompt: &Prompt, seq: &TokenSequence, coeffs: &[f64], grad: &mut Gradient);

    /// `θ ← θ − step · grad`.
    fn apply_gradient(&mut self, grad: &Gradient, step: f64);

    fn param(&self, key: ParamKey) -> f64;

    fn set_param(&mut self, key: ParamKey, value: f64);
}

/// Decodes a token sequence into an action, if it is well-formed.
pub fn decode_action(seq: &TokenSequence) -> Option<Action> {
    parse_action(&detokenize(seq).ok()?).ok()
}

/// Samples one valid action, retrying malformed samples a few times before
/// falling back to `wait()`.
pub fn sample_action<P: Policy + ?Sized>(
    policy: &P,
    prompt: &Prompt,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> (Action, TokenSequence) {
    const ATTEMPTS: usize = 8;
    for _ in 0..ATTEMPTS {
        let seq = policy
            .sample(prompt, 1, temperature, rng)
            .pop()
            .expect("one sample requested");
        if let Some(a) = decode_action(&seq) {
            return (a, seq);
        }
    }
    let a = Action::wait();
    let seq = crate::action::tokenize_action(&a);
    (a, seq)
}
