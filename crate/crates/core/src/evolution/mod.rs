//! The self-evolution loop: explore, judge, label, train, evolve the
//! curriculum, and persist every phase.

mod config;
mod distill;
mod rollout;

pub use config::{CurriculumChoice, JudgeChoice, RefSync, RunConfig, API_KEY_VAR, BACKEND_URL_VAR};
pub use distill::{collect_successful_steps, distill_generalist, DistillConfig};
pub use rollout::{derive_rng, derive_seed, evaluate, rollout, EpisodeStatus, StepRecord, TrajectoryRecord};

use crate::backend::{ChatClient, ChatConfig};
use crate::curriculum::{
    self, cap_descriptions, CurriculumBackend, CurriculumError, ExamResult, Guidebook, PhaseFeedback,
    RemoteCurriculum, ScriptedCurriculum, TaskSet, TaskStatus,
};
use crate::env::{load_env, EnvDefinition, EnvError, OracleJudge};
use crate::grpo::{combined_step, cosine_lr, GrpoError, Polarity, Reference, TrainingBatch, TrainingItem};
use crate::judgment::{judge, label_steps, ChangeDescription, JudgeBackend, RemoteJudge, Trajectory};
use crate::policy::{Policy, ToyPolicy};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot load environment {path}: {source}")]
    EnvLoad { path: String, source: EnvError },
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no successful trajectories to learn from")]
    NoSuccessfulTrajectories,
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl EvolutionError {
    /// Whether the failure came from an unreachable remote service.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            EvolutionError::Backend(_) | EvolutionError::Curriculum(CurriculumError::BackendUnavailable(_))
        )
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvolutionError {
    EvolutionError::Io(format!("{}: {e}", path.display()))
}

/// An environment together with the backends that judge and teach on it.
pub struct EnvHandle {
    pub env: Arc<EnvDefinition>,
    pub judge: Arc<dyn JudgeBackend>,
    pub curriculum: Arc<dyn CurriculumBackend>,
}

impl EnvHandle {
    /// Oracle judge and scripted curriculum.
    pub fn offline(env: EnvDefinition) -> EnvHandle {
        let env = Arc::new(env);
        EnvHandle {
            judge: Arc::new(OracleJudge::new(env.clone())),
            curriculum: Arc::new(ScriptedCurriculum::from_env(&env)),
            env,
        }
    }

    pub fn name(&self) -> &str {
        self.env.name()
    }
}

fn chat_client(base: &ChatConfig, temperature: f64) -> Result<ChatClient, EvolutionError> {
    let cfg = ChatConfig {
        temperature,
        ..base.clone()
    };
    ChatClient::new(cfg).map_err(|e| EvolutionError::Backend(e.to_string()))
}

/// Loads every configured environment and wires its backends.
pub fn build_handles(cfg: &RunConfig) -> Result<Vec<EnvHandle>, EvolutionError> {
    let mut handles = Vec::new();
    let mut names = HashSet::new();
    for path in &cfg.envs {
        let env = load_env(path).map_err(|source| EvolutionError::EnvLoad {
            path: path.display().to_string(),
            source,
        })?;
        for w in env.warnings() {
            tracing::warn!(env = env.name(), "{w}");
        }
        if !names.insert(env.name().to_string()) {
            return Err(EvolutionError::Config(format!("environment name `{}` is used twice", env.name())));
        }
        let env = Arc::new(env);
        let judge: Arc<dyn JudgeBackend> = match &cfg.judge {
            JudgeChoice::Oracle => Arc::new(OracleJudge::new(env.clone())),
            JudgeChoice::Remote(c) => Arc::new(RemoteJudge::new(chat_client(c, cfg.temperature)?)),
        };
        let curriculum: Arc<dyn CurriculumBackend> = match &cfg.curriculum {
            CurriculumChoice::Scripted => Arc::new(ScriptedCurriculum::from_env(&env)),
            CurriculumChoice::Remote(c) => Arc::new(RemoteCurriculum::new(chat_client(c, cfg.temperature)?)),
        };
        handles.push(EnvHandle { env, judge, curriculum });
    }
    Ok(handles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub episodes: usize,
    /// Judged successful.
    pub successes: usize,
    /// Judged failed.
    pub failures: usize,
    /// Not judged because a backend failed or the task could not be executed.
    pub discarded: usize,
    /// Episodes that reached the goal according to the environment.
    pub env_successes: usize,
    pub positives: usize,
    pub negatives: usize,
    pub skipped_negatives: usize,
    pub gradient_steps: usize,
    pub mean_reward: f64,
    /// Total loss at every gradient step.
    pub loss_curve: Vec<f64>,
    pub heldout_tasks: usize,
    /// Greedy success on this phase's held-out tasks after training.
    pub heldout_success: Option<f64>,
    /// Greedy success on each environment's task catalogue after training.
    pub benchmark: BTreeMap<String, f64>,
    pub benchmark_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    /// Greedy catalogue success before any training.
    pub entry_benchmark: BTreeMap<String, f64>,
    pub entry_benchmark_mean: f64,
    pub phases: Vec<PhaseReport>,
}

impl EvolutionReport {
    /// Benchmark means at entry and after each phase.
    pub fn curve(&self) -> Vec<f64> {
        std::iter::once(self.entry_benchmark_mean)
            .chain(self.phases.iter().map(|p| p.benchmark_mean))
            .collect()
    }

    pub fn final_benchmark_mean(&self) -> f64 {
        self.phases.last().map_or(self.entry_benchmark_mean, |p| p.benchmark_mean)
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub step: usize,
    pub phase: usize,
    pub l_grpo: f64,
    pub l_ai: f64,
    pub total: f64,
    pub mean_reward: f64,
    pub lr: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub struct PhaseOutcome {
    pub report: PhaseReport,
    /// Feedback for each environment, in input order.
    pub feedback: Vec<PhaseFeedback>,
    pub records: Vec<TrajectoryRecord>,
    pub metrics: Vec<MetricsLine>,
}

const HELDOUT_STREAM: u64 = 0x68656c64;
const SHUFFLE_STREAM: u64 = 0x73687566;
const GROUP_STREAM: u64 = 0x67727570;

fn benchmark<P: Policy>(policy: &P, envs: &[&EnvHandle]) -> (BTreeMap<String, f64>, f64) {
    let scores: BTreeMap<String, f64> = envs.iter().map(|h| (h.name().to_string(), evaluate(policy, &h.env))).collect();
    let mean = scores.values().sum::<f64>() / scores.len().max(1) as f64;
    (scores, mean)
}

fn heldout_indices(n: usize, fraction: f64, seed: u64, phase: usize, env_index: usize) -> HashSet<usize> {
    let k = (n as f64 * fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, &[HELDOUT_STREAM, phase as u64, env_index as u64]));
    idx.into_iter().take(k).collect()
}

struct Job<'a> {
    env_index: usize,
    task_index: usize,
    handle: &'a EnvHandle,
    task: &'a curriculum::TaskInstruction,
    heldout: bool,
}

fn run_episode<P: Policy>(cfg: &RunConfig, policy: &P, phase: usize, job: &Job) -> (TrajectoryRecord, Vec<TrainingItem>) {
    let env = &job.handle.env;
    let episode_id = format!("p{phase}-{}-{}", env.name(), job.task_index);
    let geometry = env.geometry();
    let discard = |error: String| TrajectoryRecord {
        episode_id: episode_id.clone(),
        env: env.name().to_string(),
        task_id: job.task.id.clone(),
        task: job.task.text.clone(),
        phase,
        geometry,
        heldout: job.heldout,
        steps: Vec::new(),
        final_observation: None,
        status: EpisodeStatus::Discarded,
        env_success: false,
        judgment: None,
        labels: None,
        error: Some(error),
    };
    let Some(task) = env.resolve_task(&job.task.text) else {
        tracing::warn!(episode = %episode_id, task = %job.task.text, "task cannot be executed; episode discarded");
        return (discard(EnvError::UnknownTask(job.task.text.clone()).to_string()), Vec::new());
    };
    let mut rng = derive_rng(cfg.seed, &[phase as u64, job.env_index as u64, job.task_index as u64]);
    let (steps, final_state, env_success) = match rollout(env, &task, &job.task.text, policy, cfg.sample_temperature, &mut rng) {
        Ok(r) => r,
        Err(e) => return (discard(e.to_string()), Vec::new()),
    };
    let traj = Trajectory {
        episode_id: episode_id.clone(),
        task_id: job.task.id.clone(),
        task: job.task.text.clone(),
        phase,
        steps,
        final_state,
    };
    let mut record = TrajectoryRecord::from_trajectory(&traj, env.name(), geometry, job.heldout, env_success);
    let verdict = judge(&traj, job.handle.judge.as_ref())
        .and_then(|j| label_steps(traj.steps.len(), &j).map(|labels| (j, labels)));
    let (judgment, labels) = match verdict {
        Ok(v) => v,
        Err(e) => {
            tracing::warn!(episode = %episode_id, error = %e, "judging failed; episode discarded");
            record.error = Some(e.to_string());
            return (record, Vec::new());
        }
    };
    record.status = if judgment.correctness {
        EpisodeStatus::Success
    } else {
        EpisodeStatus::Failure
    };
    tracing::info!(episode = %episode_id, task = %job.task.text, status = ?record.status, steps = traj.steps.len(), "episode judged");
    let mut items = Vec::new();
    if !job.heldout {
        let polar = labels
            .positive
            .iter()
            .map(|&i| (i, Polarity::Positive))
            .chain(labels.negative.iter().map(|&i| (i, Polarity::Negative)));
        let mut polar: Vec<(usize, Polarity)> = polar.collect();
        polar.sort_by_key(|(i, _)| *i);
        for (i, polarity) in polar {
            let step = &traj.steps[i];
            items.push(TrainingItem {
                observation: step.observation.clone(),
                instruction: traj.task.clone(),
                geometry,
                action: step.action.clone(),
                polarity,
            });
        }
    }
    record.judgment = Some(judgment);
    record.labels = Some(labels);
    (record, items)
}

/// State changes seen in judged episodes, described by the judge.
fn change_descriptions(records: &[&TrajectoryRecord], judge: &dyn JudgeBackend, cap: usize) -> Vec<ChangeDescription> {
    let mut seen_pairs = HashSet::new();
    let mut seen_text = HashSet::new();
    let mut out = Vec::new();
    for r in records {
        if r.status == EpisodeStatus::Discarded {
            continue;
        }
        let Some(last) = &r.final_observation else { continue };
        let observations: Vec<_> = r.steps.iter().map(|s| &s.observation).chain(std::iter::once(last)).collect();
        for w in observations.windows(2) {
            if out.len() >= cap {
                return out;
            }
            let (before, after) = (w[0], w[1]);
            if before.caption == after.caption || !seen_pairs.insert((before.caption.clone(), after.caption.clone())) {
                continue;
            }
            match judge.describe_change(before, after) {
                Ok(cd) => {
                    if seen_text.insert(cd.description.clone()) {
                        out.push(cd);
                    }
                }
                Err(e) => tracing::warn!(error = %e, "change description failed"),
            }
        }
    }
    out
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EvolutionError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| io_err(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvolutionError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EvolutionError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Runs one phase over every environment's task set.
///
/// Every task is played once by sampling the policy, judged and labeled.
/// Judged trajectories are written to `phase_dir` (when given) before any
/// gradient step. Labeled steps of non-held-out episodes are then trained on
/// in shuffled batches; held-out tasks are replayed greedily afterwards.
pub fn run_phase<P: Policy + Clone>(
    cfg: &RunConfig,
    policy: &mut P,
    envs: &[(&EnvHandle, &TaskSet)],
    phase: usize,
    phase_dir: Option<&Path>,
    step_offset: usize,
) -> Result<PhaseOutcome, EvolutionError> {
    if envs.iter().all(|(_, t)| t.tasks.is_empty()) {
        return Err(EvolutionError::Config("phase has no tasks".into()));
    }
    let mut jobs = Vec::new();
    for (env_index, (handle, tasks)) in envs.iter().enumerate() {
        let held = heldout_indices(tasks.tasks.len(), cfg.heldout_fraction, cfg.seed, phase, env_index);
        for (task_index, task) in tasks.tasks.iter().enumerate() {
            jobs.push(Job {
                env_index,
                task_index,
                handle,
                task,
                heldout: held.contains(&task_index),
            });
        }
    }

    let explorer: &P = policy;
    let results: Vec<(TrajectoryRecord, Vec<TrainingItem>)> =
        jobs.par_iter().map(|job| run_episode(cfg, explorer, phase, job)).collect();
    let mut records = Vec::with_capacity(results.len());
    let mut items = Vec::new();
    for (r, its) in results {
        records.push(r);
        items.extend(its);
    }
    if let Some(dir) = phase_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_jsonl(&dir.join("trajectories.jsonl"), &records)?;
    }

    let mut feedback = Vec::with_capacity(envs.len());
    for (handle, _) in envs {
        let mine: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.env == handle.name()).collect();
        let exam = mine
            .iter()
            .filter_map(|r| {
                let status = match r.status {
                    EpisodeStatus::Success => TaskStatus::Success,
                    EpisodeStatus::Failure => TaskStatus::Failure,
                    EpisodeStatus::Discarded => return None,
                };
                Some(ExamResult {
                    task_id: r.task_id.clone(),
                    status,
                })
            })
            .collect();
        let cds = change_descriptions(&mine, handle.judge.as_ref(), cfg.description_cap);
        feedback.push(PhaseFeedback {
            exam,
            change_descriptions: cds,
        });
    }

    let grpo = cfg.grpo();
    let snapshot = match cfg.ref_sync {
        RefSync::Phase => Some(policy.clone()),
        RefSync::Step => None,
    };
    let per_epoch = items.len().div_ceil(cfg.batch);
    let total_steps = per_epoch * cfg.epochs;
    let mut group_rng = derive_rng(cfg.seed, &[GROUP_STREAM, phase as u64]);
    let mut metrics = Vec::with_capacity(total_steps);
    let mut skipped = 0;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut derive_rng(cfg.seed, &[SHUFFLE_STREAM, phase as u64, epoch as u64]));
        for chunk in order.chunks(cfg.batch) {
            let batch = TrainingBatch {
                items: chunk.iter().map(|&i| items[i].clone()).collect(),
            };
            let lr = cosine_lr(cfg.lr, step, total_steps);
            let reference = match &snapshot {
                Some(s) => Reference::Frozen(s),
                None => Reference::Current,
            };
            let rep = combined_step(&batch, policy, reference, &grpo, lr, &mut group_rng)?;
            skipped += rep.skipped;
            metrics.push(MetricsLine {
                step: step_offset + step,
                phase,
                l_grpo: rep.l_grpo,
                l_ai: rep.l_ai,
                total: rep.total,
                mean_reward: rep.mean_reward,
                lr,
                positives: rep.positives,
                negatives: rep.negatives,
            });
            step += 1;
        }
    }

    let heldout: Vec<&TrajectoryRecord> = records.iter().filter(|r| r.heldout).collect();
    let heldout_success = if heldout.is_empty() {
        None
    } else {
        let wins = heldout
            .par_iter()
            .filter(|r| {
                let handle = envs.iter().find(|(h, _)| h.name() == r.env).expect("record env is in the phase").0;
                let Some(task) = handle.env.resolve_task(&r.task) else { return false };
                let mut rng = derive_rng(cfg.seed, &[]);
                rollout(&handle.env, &task, &r.task, &*policy, 0.0, &mut rng).is_ok_and(|(_, _, ok)| ok)
            })
            .count();
        Some(wins as f64 / heldout.len() as f64)
    };

    let handles: Vec<&EnvHandle> = envs.iter().map(|(h, _)| *h).collect();
    let (bench, bench_mean) = benchmark(&*policy, &handles);
    let count = |s: EpisodeStatus| records.iter().filter(|r| r.status == s).count();
    let with_positives: Vec<&MetricsLine> = metrics.iter().filter(|m| m.positives > 0).collect();
    let report = PhaseReport {
        phase,
        episodes: records.len(),
        successes: count(EpisodeStatus::Success),
        failures: count(EpisodeStatus::Failure),
        discarded: count(EpisodeStatus::Discarded),
        env_successes: records.iter().filter(|r| r.env_success).count(),
        positives: items.iter().filter(|i| i.polarity == Polarity::Positive).count(),
        negatives: items.iter().filter(|i| i.polarity == Polarity::Negative).count(),
        skipped_negatives: skipped,
        gradient_steps: metrics.len(),
        mean_reward: if with_positives.is_empty() {
            0.0
        } else {
            with_positives.iter().map(|m| m.mean_reward).sum::<f64>() / with_positives.len() as f64
        },
        loss_curve: metrics.iter().map(|m| m.total).collect(),
        heldout_tasks: heldout.len(),
        heldout_success,
        benchmark: bench,
        benchmark_mean: bench_mean,
    };
    tracing::info!(
        phase,
        successes = report.successes,
        failures = report.failures,
        discarded = report.discarded,
        benchmark = report.benchmark_mean,
        "phase complete"
    );
    Ok(PhaseOutcome {
        report,
        feedback,
        records,
        metrics,
    })
}

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
    env_dirs: Vec<PathBuf>,
}

impl RunLayout {
    /// Curriculum files live at the root for a single environment and under
    /// `envs/<name>/` otherwise.
    pub fn new(root: impl Into<PathBuf>, env_names: &[&str]) -> RunLayout {
        let root = root.into();
        let env_dirs = if env_names.len() == 1 {
            vec![root.clone()]
        } else {
            env_names.iter().map(|n| root.join("envs").join(n)).collect()
        };
        RunLayout { root, env_dirs }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn entry(&self) -> PathBuf {
        self.root.join("entry.json")
    }

    pub fn phase_dir(&self, phase: usize) -> PathBuf {
        self.root.join(format!("phase_{phase}"))
    }

    pub fn phase_report(&self, phase: usize) -> PathBuf {
        self.phase_dir(phase).join("report.json")
    }

    pub fn policy(&self, version: usize) -> PathBuf {
        self.root.join(format!("policy_v{version}.json"))
    }

    pub fn guidebook(&self, env: usize, version: usize) -> PathBuf {
        self.env_dirs[env].join(format!("guidebook_v{version}.txt"))
    }

    pub fn tasks(&self, env: usize, version: usize) -> PathBuf {
        self.env_dirs[env].join(format!("tasks_v{version}.json"))
    }

    fn create(&self) -> Result<(), EvolutionError> {
        for d in std::iter::once(&self.root).chain(&self.env_dirs) {
            std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        Ok(())
    }
}

pub fn save_policy(policy: &ToyPolicy, path: &Path) -> Result<(), EvolutionError> {
    let text = serde_json::to_string(policy).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn load_policy(path: &Path) -> Result<ToyPolicy, EvolutionError> {
    read_json(path)
}

fn append_metrics(path: &Path, lines: &[MetricsLine]) -> Result<(), EvolutionError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    for l in lines {
        let row = serde_json::to_string(l).map_err(|e| io_err(path, e))?;
        writeln!(f, "{row}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    benchmark: BTreeMap<String, f64>,
    benchmark_mean: f64,
}

struct Progress {
    next_phase: usize,
    policy: ToyPolicy,
    curricula: Vec<(Guidebook, TaskSet)>,
    entry: EntryFile,
    phases: Vec<PhaseReport>,
    step_offset: usize,
}

fn fresh_start(cfg: &RunConfig, layout: &RunLayout, handles: &[EnvHandle]) -> Result<Progress, EvolutionError> {
    let policy = match &cfg.init_policy {
        Some(p) => load_policy(p)?,
        None => ToyPolicy::new(cfg.policy.clone()),
    };
    let mut curricula = Vec::new();
    for (i, h) in handles.iter().enumerate() {
        let caption = h.env.start_observation().caption;
        let (book, tasks) = curriculum::init_tasks(&[caption], h.curriculum.as_ref())?;
        book.save(layout.guidebook(i, 0))?;
        tasks.save(layout.tasks(i, 0))?;
        curricula.push((book, tasks));
    }
    save_policy(&policy, &layout.policy(0))?;
    let refs: Vec<&EnvHandle> = handles.iter().collect();
    let (benchmark, benchmark_mean) = benchmark(&policy, &refs);
    let entry = EntryFile {
        benchmark,
        benchmark_mean,
    };
    write_json(&layout.entry(), &entry)?;
    std::fs::write(layout.metrics(), "").map_err(|e| io_err(&layout.metrics(), e))?;
    Ok(Progress {
        next_phase: 0,
        policy,
        curricula,
        entry,
        phases: Vec::new(),
        step_offset: 0,
    })
}

/// Picks up after the last phase whose report and successor artifacts
/// are all on disk.
fn resume_state(cfg: &RunConfig, layout: &RunLayout, n_envs: usize) -> Result<Progress, EvolutionError> {
    let entry: EntryFile = read_json(&layout.entry()).map_err(|e| EvolutionError::Resume(e.to_string()))?;
    let complete = |p: usize| {
        layout.phase_report(p).exists()
            && layout.policy(p + 1).exists()
            && (p + 1 == cfg.phases || (0..n_envs).all(|e| layout.tasks(e, p + 1).exists()))
    };
    let mut done = 0;
    while done < cfg.phases && complete(done) {
        done += 1;
    }
    let mut phases = Vec::new();
    for p in 0..done {
        phases.push(read_json::<PhaseReport>(&layout.phase_report(p))?);
    }
    let version = done;
    let policy = load_policy(&layout.policy(version)).map_err(|e| EvolutionError::Resume(e.to_string()))?;
    let mut curricula = Vec::new();
    if done < cfg.phases {
        for e in 0..n_envs {
            let book = Guidebook::load(layout.guidebook(e, version))?;
            let tasks = TaskSet::load(layout.tasks(e, version), version)?;
            curricula.push((book, tasks));
        }
    }
    let text = std::fs::read_to_string(layout.metrics()).unwrap_or_default();
    let mut kept = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let m: MetricsLine = serde_json::from_str(line).map_err(|e| EvolutionError::Resume(e.to_string()))?;
        if m.phase < done {
            kept.push(m);
        }
    }
    write_jsonl(&layout.metrics(), &kept)?;
    tracing::info!(completed_phases = done, "resuming run");
    Ok(Progress {
        next_phase: done,
        policy,
        curricula,
        entry,
        phases,
        step_offset: kept.len(),
    })
}

/// Runs the full loop described by `cfg`, writing every artifact under
/// `cfg.out_dir`. A directory already holding a run with the same
/// configuration is resumed after its last complete phase.
pub fn run_evolution(cfg: &RunConfig) -> Result<(EvolutionReport, ToyPolicy), EvolutionError> {
    cfg.validate()?;
    let handles = build_handles(cfg)?;
    let names: Vec<&str> = handles.iter().map(|h| h.name()).collect();
    let layout = RunLayout::new(&cfg.out_dir, &names);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| EvolutionError::Config(e.to_string()))?;
    pool.install(|| run_in(cfg, &handles, &layout))
}

fn run_in(cfg: &RunConfig, handles: &[EnvHandle], layout: &RunLayout) -> Result<(EvolutionReport, ToyPolicy), EvolutionError> {
    let resolved = cfg.to_toml();
    let mut progress = if layout.config().exists() {
        let existing = std::fs::read_to_string(layout.config()).map_err(|e| io_err(&layout.config(), e))?;
        if existing != resolved {
            return Err(EvolutionError::Config(format!(
                "{} already holds a run with a different configuration",
                layout.root.display()
            )));
        }
        resume_state(cfg, layout, handles.len())?
    } else {
        layout.create()?;
        std::fs::write(layout.config(), &resolved).map_err(|e| io_err(&layout.config(), e))?;
        fresh_start(cfg, layout, handles)?
    };

    for phase in progress.next_phase..cfg.phases {
        let pairs: Vec<(&EnvHandle, &TaskSet)> = handles.iter().zip(progress.curricula.iter().map(|(_, t)| t)).collect();
        let outcome = run_phase(
            cfg,
            &mut progress.policy,
            &pairs,
            phase,
            Some(&layout.phase_dir(phase)),
            progress.step_offset,
        )?;
        write_json(&layout.phase_report(phase), &outcome.report)?;
        append_metrics(&layout.metrics(), &outcome.metrics)?;
        progress.step_offset += outcome.metrics.len();
        progress.phases.push(outcome.report);

        if phase + 1 < cfg.phases {
            let mut next = Vec::with_capacity(handles.len());
            for (i, ((book, tasks), fb)) in progress.curricula.iter().zip(&outcome.feedback).enumerate() {
                let fb = PhaseFeedback {
                    exam: fb.exam.clone(),
                    change_descriptions: cap_descriptions(&fb.change_descriptions, cfg.description_cap),
                };
                let (book2, tasks2) = curriculum::evolve(book, tasks, &fb, handles[i].curriculum.as_ref(), cfg.tasks_per_phase)?;
                book2.save(layout.guidebook(i, phase + 1))?;
                tasks2.save(layout.tasks(i, phase + 1))?;
                next.push((book2, tasks2));
            }
            progress.curricula = next;
        }
        save_policy(&progress.policy, &layout.policy(phase + 1))?;
    }

    let report = EvolutionReport {
        entry_benchmark: progress.entry.benchmark,
        entry_benchmark_mean: progress.entry.benchmark_mean,
        phases: progress.phases,
    };
    write_json(&layout.report(), &report)?;
    Ok((report, progress.policy))
}
