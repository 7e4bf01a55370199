use super::rollout::{derive_rng, EpisodeStatus, TrajectoryRecord};
use super::EvolutionError;
use crate::action::parse_action;
use crate::grpo::{behavior_cloning_step, Polarity, TrainingItem};
use crate::policy::Policy;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            epochs: 30,
            lr: 4.0,
            batch: 16,
            seed: 0,
        }
    }
}

fn phase_dirs(run: &Path) -> Result<Vec<PathBuf>, EvolutionError> {
    let entries = std::fs::read_dir(run).map_err(|e| EvolutionError::Io(format!("{}: {e}", run.display())))?;
    let mut dirs: Vec<(usize, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let k = name.strip_prefix("phase_")?.parse().ok()?;
            Some((k, e.path()))
        })
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

/// Positive-labeled steps of every successful trajectory in the given run
/// directories, in run, phase and file order.
pub fn collect_successful_steps(runs: &[PathBuf]) -> Result<Vec<TrainingItem>, EvolutionError> {
    let mut items = Vec::new();
    for run in runs {
        for dir in phase_dirs(run)? {
            let path = dir.join("trajectories.jsonl");
            let Ok(text) = std::fs::read_to_string(&path) else { continue };
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: TrajectoryRecord = serde_json::from_str(line)
                    .map_err(|e| EvolutionError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
                if rec.status != EpisodeStatus::Success {
                    continue;
                }
                let Some(labels) = &rec.labels else { continue };
                for &i in &labels.positive {
                    let step = &rec.steps[i];
                    let action = parse_action(&step.action_text)
                        .map_err(|e| EvolutionError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
                    items.push(TrainingItem {
                        observation: step.observation.clone(),
                        instruction: rec.task.clone(),
                        geometry: rec.geometry,
                        action,
                        polarity: Polarity::Positive,
                    });
                }
            }
        }
    }
    Ok(items)
}

/// Behavior-clones the successful steps of specialist runs into `base`.
pub fn distill_generalist<P: Policy>(runs: &[PathBuf], mut base: P, cfg: &DistillConfig) -> Result<P, EvolutionError> {
    let items = collect_successful_steps(runs)?;
    if items.is_empty() {
        return Err(EvolutionError::NoSuccessfulTrajectories);
    }
    if cfg.batch == 0 || cfg.epochs == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(EvolutionError::Config("distillation needs positive epochs, batch and lr".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.seed, &[epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<TrainingItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            epoch_loss += behavior_cloning_step(&batch, &mut base, cfg.lr)?;
            batches += 1;
        }
        tracing::debug!(epoch, loss = epoch_loss / batches as f64, "distillation epoch");
    }
    tracing::info!(steps = items.len(), "distilled successful steps");
    Ok(base)
}
