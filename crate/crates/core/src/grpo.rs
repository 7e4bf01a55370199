//! Group-relative policy optimization with an adversarial-imitation term.
//!
//! Positive steps are trained with GRPO: `G` candidate actions are sampled
//! for the step's state, scored against the reference action with the
//! verifiable reward, normalized within the group and pushed through a
//! clipped per-token ratio objective with a KL penalty. Negative steps (the
//! judged failure actions) have their log-ratio against the reference policy
//! minimized, floored at `-M`.

use crate::action::{tokenize_action, Action, TokenSequence};
use crate::judgment::StateObservation;
use crate::policy::{decode_action, Gradient, Policy, Prompt};
use crate::reward::{reward, ScreenGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrpoError {
    #[error("group must contain at least 2 samples, got {0}")]
    GroupTooSmall(usize),
    #[error("log-probability lengths differ: {theta} under the policy, {reference} under the reference")]
    LengthMismatch { theta: usize, reference: usize },
    #[error("empty training batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub ai_gamma: f64,
    /// Floor of the adversarial-imitation log-ratio.
    pub ai_clamp: f64,
    /// Temperature for drawing group samples.
    pub sample_temperature: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            ai_gamma: 0.2,
            ai_clamp: 5.0,
            sample_temperature: 1.0,
        }
    }
}

/// `(r - mean) / std` with the population std; all zeros when std is 0.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Guard against a std that is zero up to rounding.
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `π_ref/π_θ − 1 − log(π_ref/π_θ)`, computed from log-probabilities.
pub fn kl_estimate(logp_ref: f64, logp_theta: f64) -> f64 {
    let d = logp_ref - logp_theta;
    (d.exp() - 1.0 - d).max(0.0)
}

fn check_lengths(theta: &[Vec<f64>], reference: &[Vec<f64>], advantages: &[f64]) -> Result<(), GrpoError> {
    if theta.len() != reference.len() || theta.len() != advantages.len() {
        return Err(GrpoError::LengthMismatch {
            theta: theta.len(),
            reference: reference.len(),
        });
    }
    for (a, b) in theta.iter().zip(reference) {
        if a.len() != b.len() {
            return Err(GrpoError::LengthMismatch {
                theta: a.len(),
                reference: b.len(),
            });
        }
    }
    Ok(())
}

/// Clipped GRPO objective for one group, negated into a loss, together with
/// its derivative with respect to every per-token log-probability under θ.
///
/// `loss = −(1/G) Σ_i (1/|a_i|) Σ_t [min(ρ A_i, clip(ρ, 1−ε, 1+ε) A_i) − β KL]`
/// with `ρ = π_θ/π_ref` per token.
pub fn grpo_loss_and_grad(
    theta: &[Vec<f64>],
    reference: &[Vec<f64>],
    advantages: &[f64],
    eps: f64,
    beta: f64,
) -> Result<(f64, Vec<Vec<f64>>), GrpoError> {
    check_lengths(theta, reference, advantages)?;
    let g = theta.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(theta.len());
    for ((lt, lr), &a) in theta.iter().zip(reference).zip(advantages) {
        let n = lt.len().max(1) as f64;
        let mut seq_grad = Vec::with_capacity(lt.len());
        let mut seq_sum = 0.0;
        for (&x, &r) in lt.iter().zip(lr) {
            let ratio = (x - r).exp();
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
            let (surrogate, d_surrogate) = if unclipped <= clipped {
                (unclipped, unclipped)
            } else {
                (clipped, 0.0)
            };
            seq_sum += surrogate - beta * kl_estimate(r, x);
            let d_kl = 1.0 - (r - x).exp();
            seq_grad.push(-(d_surrogate - beta * d_kl) / (g * n));
        }
        loss -= seq_sum / (g * n);
        grads.push(seq_grad);
    }
    Ok((loss, grads))
}

pub fn grpo_loss(theta: &[Vec<f64>], reference: &[Vec<f64>], advantages: &[f64], eps: f64, beta: f64) -> Result<f64, GrpoError> {
    grpo_loss_and_grad(theta, reference, advantages, eps, beta).map(|(l, _)| l)
}

/// `max(−M, Σ_t (log π_θ − log π_ref))` and its per-token derivative.
pub fn ai_loss_and_grad(theta: &[f64], reference: &[f64], clamp: f64) -> Result<(f64, Vec<f64>), GrpoError> {
    if theta.len() != reference.len() {
        return Err(GrpoError::LengthMismatch {
            theta: theta.len(),
            reference: reference.len(),
        });
    }
    let log_ratio: f64 = theta.iter().zip(reference).map(|(a, b)| a - b).sum();
    if log_ratio > -clamp {
        Ok((log_ratio, vec![1.0; theta.len()]))
    } else {
        Ok((-clamp, vec![0.0; theta.len()]))
    }
}

pub fn ai_loss(theta: &[f64], reference: &[f64], clamp: f64) -> Result<f64, GrpoError> {
    ai_loss_and_grad(theta, reference, clamp).map(|(l, _)| l)
}

/// Negative mean sequence log-likelihood.
pub fn bc_loss(logprobs: &[Vec<f64>]) -> f64 {
    -logprobs.iter().map(|l| l.iter().sum::<f64>()).sum::<f64>() / logprobs.len().max(1) as f64
}

/// Cosine decay from `base` at step 0 to 0 at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One labeled step: the state it was taken in and either the reference
/// action to imitate (positive) or the failure action to avoid (negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub observation: StateObservation,
    pub instruction: String,
    pub geometry: ScreenGeometry,
    pub action: Action,
    pub polarity: Polarity,
}

impl TrainingItem {
    pub fn prompt(&self) -> Prompt<'_> {
        Prompt {
            observation: &self.observation,
            instruction: &self.instruction,
            geometry: self.geometry,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub items: Vec<TrainingItem>,
}

/// Per-step loss components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_grpo: f64,
    pub l_ai: f64,
    pub total: f64,
    /// Mean reward over every sampled group member.
    pub mean_reward: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Negative items whose action the reference policy cannot produce.
    pub skipped: usize,
    pub lr: f64,
}

/// The policy the ratios and KL are taken against.
pub enum Reference<'a, P> {
    /// The current parameters, detached: ratios are 1 and the KL term vanishes.
    Current,
    Frozen(&'a P),
}

impl<P> Clone for Reference<'_, P> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<P> Copy for Reference<'_, P> {}

struct ItemResult {
    loss: f64,
    grad: Gradient,
    reward_sum: f64,
    reward_count: usize,
    skipped: bool,
}

fn positive_item<P: Policy>(
    item: &TrainingItem,
    policy: &P,
    reference: Reference<P>,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<ItemResult, GrpoError> {
    let prompt = item.prompt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler: &P = match reference {
        Reference::Current => policy,
        Reference::Frozen(r) => r,
    };
    let group: Vec<TokenSequence> = sampler.sample(&prompt, cfg.group_size, cfg.sample_temperature, &mut rng);
    let rewards: Vec<f64> = group
        .iter()
        .map(|seq| {
            decode_action(seq)
                .and_then(|a| reward(&a, &item.action, item.geometry).ok())
                .map_or(0.0, |r| r.total)
        })
        .collect();
    let advantages = group_advantages(&rewards)?;
    let theta: Vec<Vec<f64>> = group.iter().map(|s| policy.logprobs(&prompt, s)).collect();
    let refs: Vec<Vec<f64>> = match reference {
        Reference::Current => theta.clone(),
        Reference::Frozen(r) => group.iter().map(|s| r.logprobs(&prompt, s)).collect(),
    };
    let (loss, dlogp) = grpo_loss_and_grad(&theta, &refs, &advantages, cfg.clip_eps, cfg.kl_beta)?;
    let mut grad = Gradient::default();
    for (seq, coeffs) in group.iter().zip(&dlogp) {
        policy.accumulate_logprob_grad(&prompt, seq, coeffs, &mut grad);
    }
    Ok(ItemResult {
        loss,
        grad,
        reward_sum: rewards.iter().sum(),
        reward_count: rewards.len(),
        skipped: false,
    })
}

fn negative_item<P: Policy>(item: &TrainingItem, policy: &P, reference: Reference<P>, cfg: &GrpoConfig) -> Result<ItemResult, GrpoError> {
    let prompt = item.prompt();
    let seq = tokenize_action(&item.action);
    let theta = policy.logprobs(&prompt, &seq);
    let refs = match reference {
        Reference::Current => theta.clone(),
        Reference::Frozen(r) => r.logprobs(&prompt, &seq),
    };
    let mut grad = Gradient::default();
    if theta.iter().chain(&refs).any(|x| !x.is_finite()) {
        return Ok(ItemResult {
            loss: 0.0,
            grad,
            reward_sum: 0.0,
            reward_count: 0,
            skipped: true,
        });
    }
    let (loss, coeffs) = ai_loss_and_grad(&theta, &refs, cfg.ai_clamp)?;
    policy.accumulate_logprob_grad(&prompt, &seq, &coeffs, &mut grad);
    Ok(ItemResult {
        loss,
        grad,
        reward_sum: 0.0,
        reward_count: 0,
        skipped: false,
    })
}

/// One gradient step on `L_GRPO + γ · L_AI`, each averaged over its items.
///
/// Items are processed in parallel; their gradients are merged in batch
/// order so the update is independent of thread scheduling.
pub fn combined_step<P: Policy>(
    batch: &TrainingBatch,
    policy: &mut P,
    reference: Reference<P>,
    cfg: &GrpoConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport, GrpoError> {
    if batch.items.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let seeds: Vec<u64> = batch.items.iter().map(|_| rng.gen()).collect();
    let frozen: &P = policy;
    let results: Vec<Result<ItemResult, GrpoError>> = batch
        .items
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(item, seed)| match item.polarity {
            Polarity::Positive => positive_item(item, frozen, reference, cfg, *seed),
            Polarity::Negative => negative_item(item, frozen, reference, cfg),
        })
        .collect();

    let positives = batch.items.iter().filter(|i| i.polarity == Polarity::Positive).count();
    let mut report = LossReport {
        positives,
        negatives: batch.items.len() - positives,
        lr,
        ..LossReport::default()
    };
    let mut grad = Gradient::default();
    let (mut reward_sum, mut reward_count) = (0.0, 0);
    for (item, res) in batch.items.iter().zip(results) {
        let mut res = res?;
        let weight = match item.polarity {
            Polarity::Positive => {
                report.l_grpo += res.loss / positives as f64;
                1.0 / positives as f64
            }
            Polarity::Negative => {
                report.l_ai += res.loss / report.negatives as f64;
                cfg.ai_gamma / report.negatives as f64
            }
        };
        report.skipped += usize::from(res.skipped);
        reward_sum += res.reward_sum;
        reward_count += res.reward_count;
        res.grad.scale(weight);
        grad.merge(&res.grad);
    }
    report.total = report.l_grpo + cfg.ai_gamma * report.l_ai;
    report.mean_reward = if reward_count > 0 { reward_sum / reward_count as f64 } else { 0.0 };
    policy.apply_gradient(&grad, lr);
    Ok(report)
}

/// One supervised step maximizing the log-likelihood of successful actions.
/// Returns the loss before the update.
pub fn behavior_cloning_step<P: Policy>(items: &[TrainingItem], policy: &mut P, lr: f64) -> Result<f64, GrpoError> {
    if items.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let n = items.len() as f64;
    let frozen: &P = policy;
    let parts: Vec<(Vec<f64>, Gradient)> = items
        .par_iter()
        .map(|item| {
            let prompt = item.prompt();
            let seq = tokenize_action(&item.action);
            let lp = frozen.logprobs(&prompt, &seq);
            let mut g = Gradient::default();
            frozen.accumulate_logprob_grad(&prompt, &seq, &vec![-1.0 / n; seq.len()], &mut g);
            (lp, g)
        })
        .collect();
    let mut grad = Gradient::default();
    let mut lps = Vec::with_capacity(parts.len());
    for (lp, g) in parts {
        grad.merge(&g);
        lps.push(lp);
    }
    let loss = bc_loss(&lps);
    policy.apply_gradient(&grad, lr);
    Ok(loss)
}
