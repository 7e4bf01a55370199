use super::EvolutionError;
use crate::backend::ChatConfig;
use crate::grpo::GrpoConfig;
use crate::policy::ToyPolicyConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable overriding every remote backend URL.
pub const BACKEND_URL_VAR: &str = "EVOFORGE_BACKEND_URL";
/// Environment variable supplying the bearer token for remote backends.
pub const API_KEY_VAR: &str = "EVOFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeChoice {
    /// Exact verdicts computed from the environment's state graph.
    Oracle,
    Remote(ChatConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurriculumChoice {
    /// Deterministic curriculum over the environment's task catalogue.
    Scripted,
    Remote(ChatConfig),
}

/// Which policy ratios and the KL penalty are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefSync {
    /// The reference tracks the policy at every gradient step.
    Step,
    /// The reference is snapshotted once at the start of each phase.
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phases: usize,
    pub tasks_per_phase: usize,
    /// GRPO group size.
    pub group: usize,
    /// Training items per gradient step.
    pub batch: usize,
    /// Base learning rate, cosine-decayed within each phase.
    pub lr: f64,
    /// Passes over a phase's labeled steps.
    pub epochs: usize,
    pub eps: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ai_clamp: f64,
    /// Sampling temperature of remote backends.
    pub temperature: f64,
    /// Policy sampling temperature for exploration rollouts and GRPO groups.
    pub sample_temperature: f64,
    pub seed: u64,
    /// Fraction of each phase's tasks excluded from training and used to
    /// measure held-out success.
    pub heldout_fraction: f64,
    /// Maximum number of state-change descriptions fed to the curriculum.
    pub description_cap: usize,
    pub ref_sync: RefSync,
    /// Concurrent episodes; 0 uses every core.
    pub parallelism: usize,
    pub envs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Starting parameters; a fresh policy when absent.
    pub init_policy: Option<PathBuf>,
    pub policy: ToyPolicyConfig,
    pub judge: JudgeChoice,
    pub curriculum: CurriculumChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phases: 3,
            tasks_per_phase: 100,
            group: 8,
            batch: 16,
            lr: 2e-5,
            epochs: 1,
            eps: 0.2,
            beta: 0.04,
            gamma: 0.2,
            ai_clamp: 5.0,
            temperature: 0.0,
            sample_temperature: 1.0,
            seed: 0,
            heldout_fraction: 0.2,
            description_cap: 100,
            ref_sync: RefSync::Step,
            parallelism: 0,
            envs: Vec::new(),
            out_dir: PathBuf::from("run"),
            init_policy: None,
            policy: ToyPolicyConfig::default(),
            judge: JudgeChoice::Oracle,
            curriculum: CurriculumChoice::Scripted,
        }
    }
}

fn config_error(msg: impl Into<String>) -> EvolutionError {
    EvolutionError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, EvolutionError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, EvolutionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        self.envs = self.envs.iter().map(join).collect();
        self.out_dir = join(&self.out_dir);
        self.init_policy = self.init_policy.as_ref().map(join);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Applies the backend URL and API key from the process environment.
    pub fn apply_env_overrides(&mut self) {
        let url = std::env::var(BACKEND_URL_VAR).ok().filter(|s| !s.is_empty());
        let key = std::env::var(API_KEY_VAR).ok().filter(|s| !s.is_empty());
        let patch = |c: &mut ChatConfig| {
            if let Some(u) = &url {
                c.url = u.clone();
            }
            if key.is_some() {
                c.api_key = key.clone();
            }
        };
        if let JudgeChoice::Remote(c) = &mut self.judge {
            patch(c);
        }
        if let CurriculumChoice::Remote(c) = &mut self.curriculum {
            patch(c);
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        let counts = [
            ("phases", self.phases),
            ("tasks_per_phase", self.tasks_per_phase),
            ("batch", self.batch),
            ("epochs", self.epochs),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(config_error(format!("`{name}` must be at least 1")));
            }
        }
        if self.group < 2 {
            return Err(config_error("`group` must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config_error("`gamma` must lie in [0, 1]"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_error("`lr` must be positive"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(config_error("`eps` must be positive"));
        }
        let non_negative = [
            ("beta", self.beta),
            ("ai_clamp", self.ai_clamp),
            ("temperature", self.temperature),
            ("sample_temperature", self.sample_temperature),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_error(format!("`{name}` must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(config_error("`heldout_fraction` must lie in [0, 1)"));
        }
        if self.envs.is_empty() {
            return Err(config_error("`envs` lists no environment"));
        }
        if !(self.policy.prior_bonus.is_finite() && self.policy.max_text_len >= 1 && !self.policy.action_kinds.is_empty()) {
            return Err(config_error("`policy` needs a finite prior bonus, text length and action kinds"));
        }
        Ok(())
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group,
            clip_eps: self.eps,
            kl_beta: self.beta,
            ai_gamma: self.gamma,
            ai_clamp: self.ai_clamp,
            sample_temperature: self.sample_temperature,
        }
    }
}
