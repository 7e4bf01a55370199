//! `evoforge`: command-line entry point for the self-evolution pipeline.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use evoforge_core::action::parse_action;
use evoforge_core::env::load_env;
use evoforge_core::evolution::{
    distill_generalist, load_policy, run_evolution, save_policy, DistillConfig, EvolutionError, RunConfig,
    TrajectoryRecord,
};
use evoforge_core::metrics::{bench_judge_files, curve_csv};
use evoforge_core::policy::ToyPolicy;
use evoforge_core::reward::{reward, ScreenGeometry};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "evoforge", version, about = "Self-evolving computer-use agent training on simulated software")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum concurrent episodes (0 = all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Print a single JSON document on standard output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the self-evolution loop described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 4 unless the final greedy success reaches this rate.
        #[arg(long)]
        expect_success: Option<f64>,
    },
    /// Distill successful steps of specialist runs into one policy.
    Distill {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a predicted action against a reference action.
    Reward {
        #[arg(long)]
        pred: String,
        #[arg(long = "ref")]
        reference: String,
        /// Screen size as WxH.
        #[arg(long)]
        geom: String,
    },
    /// Evaluate judge verdicts against ground truth.
    BenchJudge {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        /// Writes the metrics curve across prediction files as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Summarize a trajectories file or show one episode.
    Inspect {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        episode: Option<String>,
    },
    /// Check an environment definition file.
    ValidateEnv { file: PathBuf },
}

/// Failure carrying its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const USAGE: u8 = 1;
const CONFIG: u8 = 2;
const BACKEND: u8 = 3;
const ACCEPTANCE: u8 = 4;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn evolution_failure(e: EvolutionError) -> Failure {
    let code = if e.is_backend() { BACKEND } else { CONFIG };
    fail(code, e)
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
    } else {
        print!("{}", human());
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.6}"))
}

fn cmd_run(g: &Global, config: &Path, out: Option<&PathBuf>, expect: Option<f64>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config).map_err(evolution_failure)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = out {
        cfg.out_dir = o.clone();
    }
    cfg.apply_env_overrides();
    let (report, _) = run_evolution(&cfg).map_err(evolution_failure)?;
    emit(g.json, &report, || {
        let mut s = format!("entry greedy success {:.4}\n", report.entry_benchmark_mean);
        for p in &report.phases {
            s.push_str(&format!(
                "phase {}: {} episodes ({} success, {} failure, {} discarded), {} gradient steps, held-out {}, greedy success {:.4}\n",
                p.phase,
                p.episodes,
                p.successes,
                p.failures,
                p.discarded,
                p.gradient_steps,
                fmt_opt(p.heldout_success),
                p.benchmark_mean
            ));
        }
        s.push_str(&format!("artifacts in {}\n", cfg.out_dir.display()));
        s
    });
    if let Some(min) = expect {
        let got = report.final_benchmark_mean();
        if got < min {
            return Err(fail(ACCEPTANCE, anyhow::anyhow!("final greedy success {got:.4} is below {min:.4}")));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DistillOutput {
    runs: Vec<PathBuf>,
    policy: PathBuf,
}

fn cmd_distill(g: &Global, runs: &[PathBuf], out: &Path, epochs: Option<usize>, lr: Option<f64>) -> Result<(), Failure> {
    let mut cfg = DistillConfig::default();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(l) = lr {
        cfg.lr = l;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    // The fresh base policy shares the first specialist's architecture.
    let first = runs[0].join("policy_v0.json");
    let base_cfg = load_policy(&first)
        .map(|p| p.config().clone())
        .map_err(|e| fail(CONFIG, e))?;
    let policy = distill_generalist(runs, ToyPolicy::new(base_cfg), &cfg).map_err(evolution_failure)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| fail(CONFIG, e))?;
    let path = out.join("policy.json");
    save_policy(&policy, &path).map_err(evolution_failure)?;
    let result = DistillOutput {
        runs: runs.to_vec(),
        policy: path.clone(),
    };
    emit(g.json, &result, || format!("distilled policy written to {}\n", path.display()));
    Ok(())
}

fn cmd_reward(g: &Global, pred: &str, reference: &str, geom: &str) -> Result<(), Failure> {
    let geom = ScreenGeometry::parse(geom).ok_or_else(|| fail(CONFIG, anyhow::anyhow!("bad geometry `{geom}`, expected WxH")))?;
    let p = parse_action(pred).with_context(|| format!("--pred `{pred}`")).map_err(|e| fail(CONFIG, e))?;
    let r = parse_action(reference)
        .with_context(|| format!("--ref `{reference}`"))
        .map_err(|e| fail(CONFIG, e))?;
    let b = reward(&p, &r, geom).map_err(|e| fail(CONFIG, e))?;
    emit(g.json, &b, || {
        format!("type_match {}\nr_dist {:.6}\ntotal {:.6}\n", b.type_match, b.r_dist, b.total)
    });
    Ok(())
}

fn cmd_bench(g: &Global, preds: &[PathBuf], gt: &Path, csv: Option<&PathBuf>) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for p in preds {
        reports.push(bench_judge_files(p, gt).map_err(|e| fail(CONFIG, e))?);
    }
    if let Some(path) = csv {
        std::fs::write(path, curve_csv(&reports))
            .with_context(|| format!("writing {}", path.display()))
            .map_err(|e| fail(CONFIG, e))?;
    }
    emit(g.json, &reports, || {
        let mut s = String::new();
        for r in &reports {
            let c = r.confusion;
            s.push_str(&format!(
                "{}: scored {} (unmatched {}), tp {} fp {} tn {} fn {}, precision {}, npv {}, ap {}\n",
                r.source,
                r.scored,
                r.unmatched,
                c.tp,
                c.fp,
                c.tn,
                c.fn_,
                fmt_opt(r.precision),
                fmt_opt(r.npv),
                fmt_opt(r.average_precision)
            ));
        }
        s
    });
    Ok(())
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    episode_id: &'a str,
    task: &'a str,
    status: evoforge_core::evolution::EpisodeStatus,
    env_success: bool,
    steps: usize,
}

fn cmd_inspect(g: &Global, traj: &Path, episode: Option<&str>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(traj)
        .with_context(|| format!("reading {}", traj.display()))
        .map_err(|e| fail(CONFIG, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: TrajectoryRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", traj.display(), i + 1))
            .map_err(|e| fail(CONFIG, e))?;
        records.push(r);
    }
    match episode {
        Some(id) => {
            let r = records
                .iter()
                .find(|r| r.episode_id == id)
                .ok_or_else(|| fail(USAGE, anyhow::anyhow!("no episode `{id}` in {}", traj.display())))?;
            emit(g.json, r, || {
                let mut s = format!("episode {} [{}] task: {}\nstatus {:?}\n", r.episode_id, r.env, r.task, r.status);
                for (i, st) in r.steps.iter().enumerate() {
                    let label = r.labels.as_ref().map_or("", |l| {
                        if l.positive.contains(&i) {
                            "correct"
                        } else if l.negative.contains(&i) {
                            "failure"
                        } else {
                            "ignored"
                        }
                    });
                    s.push_str(&format!("  {i}: {} on {} {label}\n", st.action_text, st.observation.screen_id));
                }
                if let Some(j) = &r.judgment {
                    s.push_str(&format!("rationale: {}\n", j.rationale));
                }
                if let Some(e) = &r.error {
                    s.push_str(&format!("error: {e}\n"));
                }
                s
            });
        }
        None => {
            let rows: Vec<EpisodeSummary> = records
                .iter()
                .map(|r| EpisodeSummary {
                    episode_id: &r.episode_id,
                    task: &r.task,
                    status: r.status,
                    env_success: r.env_success,
                    steps: r.steps.len(),
                })
                .collect();
            emit(g.json, &rows, || {
                rows.iter()
                    .map(|r| format!("{}\t{:?}\t{} steps\t{}\n", r.episode_id, r.status, r.steps, r.task))
                    .collect()
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EnvSummary {
    name: String,
    screens: usize,
    widgets: usize,
    tasks: usize,
    warnings: Vec<String>,
}

fn cmd_validate(g: &Global, file: &Path) -> Result<(), Failure> {
    let env = load_env(file).map_err(|e| fail(CONFIG, e))?;
    let s = EnvSummary {
        name: env.name().to_string(),
        screens: env.screen_count(),
        widgets: env.widget_count(),
        tasks: env.tasks().len(),
        warnings: env.warnings().to_vec(),
    };
    emit(g.json, &s, || {
        let mut out = format!("{}: {} screens, {} widgets, {} tasks\n", s.name, s.screens, s.widgets, s.tasks);
        for w in &s.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    });
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Run {
            config,
            out,
            expect_success,
        } => cmd_run(g, config, out.as_ref(), *expect_success),
        Command::Distill { runs, out, epochs, lr } => cmd_distill(g, runs, out, *epochs, *lr),
        Command::Reward { pred, reference, geom } => cmd_reward(g, pred, reference, geom),
        Command::BenchJudge { pred, gt, csv } => cmd_bench(g, pred, gt, csv.as_ref()),
        Command::Inspect { traj, episode } => cmd_inspect(g, traj, episode.as_deref()),
        Command::ValidateEnv { file } => cmd_validate(g, file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
