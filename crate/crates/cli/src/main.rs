//! `movesd`: demonstrations, dynamics pretraining, adversarial training,
//! rollouts, evaluation, and reports from one config file.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use movesd::dynamics::{build_dynamics_dataset, write_dynamics_dataset, DynamicsModel};
use movesd::envsim::{audit_demonstrations, audit_trajectories, expert_episode};
use movesd::evalbench::{evaluate, markov_fit, read_report, render_table, test_seeds, write_report, EvalTask, Predictor};
use movesd::experiment::ExperimentConfig;
use movesd::gailtrain::{
    generate, load_checkpoint_dir, pretrain_for, train, Constraints, IterationLog, TrainConfig, TrainOption, TrainOptions,
    LOG_FILE,
};
use movesd::io::{read_trajectories, write_trajectories};
use movesd::types::{AgentState, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use manifest::{unix_now, version_string, RunManifest};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "movesd", version, about = "Constraint-aware adversarial imitation of agent movement")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of training, environment, and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Rollout threads; defaults to the number of logical cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptionArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
}

#[derive(Subcommand)]
enum Cmd {
    /// Runs the scripted expert and writes demonstrations.
    GenDemos {
        #[command(flatten)]
        common: Common,
        /// Episodes to record; the config's `demo_episodes` when omitted.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fits the Beta dynamics model on demonstration stays.
    PretrainDynamics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Adversarial training; writes checkpoints and the training log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        option: Option<OptionArg>,
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Pretrained dynamics model for option 1.
        #[arg(long, conflicts_with = "resume")]
        dynamics: Option<PathBuf>,
        /// Continue from the latest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Generates trajectories with a trained policy from held-out snapshots.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Steps to generate; the config's evaluation horizon when omitted.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Scores a trained policy and both baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `next-loc`, `gen-<steps>` (e.g. `gen-1000`), or `both`.
        #[arg(long, value_parser = parse_task)]
        task: (EvalTask, Option<usize>),
        /// Demonstrations the Markov baseline is fitted on.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Merges evaluation reports and training curves.
    Report {
        #[command(flatten)]
        common: Common,
        /// `report.json` files to merge.
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Training log to export as curves.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<(EvalTask, Option<usize>), String> {
    match s {
        "next-loc" => Ok((EvalTask::NextLoc, None)),
        "both" => Ok((EvalTask::Both, None)),
        _ => {
            let steps = s
                .strip_prefix("gen-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("`{s}` is not next-loc, both, or gen-<steps>"))?;
            Ok((EvalTask::Gen, Some(steps)))
        }
    }
}

/// Loaded config with the command-line overrides applied.
fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.train.workers = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    cfg.validate()?;
    Ok(cfg)
}

fn demos_for(cfg: &ExperimentConfig, path: Option<&Path>) -> CliResult<Vec<Trajectory>> {
    Ok(match path {
        Some(p) => read_trajectories(p)?,
        None => cfg.demonstrations()?,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_log(path: &Path) -> CliResult<Vec<IterationLog>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?)
}

struct Run {
    command: &'static str,
    started: u64,
    cfg: ExperimentConfig,
    out: PathBuf,
    artifacts: Vec<String>,
}

impl Run {
    fn start(command: &'static str, common: &Common) -> CliResult<Self> {
        let cfg = load_config(common)?;
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            command,
            started: unix_now(),
            cfg,
            out: common.out.clone(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self) -> CliResult<()> {
        let m = RunManifest {
            command: self.command.into(),
            args: std::env::args().skip(1).collect(),
            config: self.cfg.to_toml_string()?,
            seed: self.cfg.train.seed,
            version: version_string(),
            out_dir: self.out.clone(),
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts: self.artifacts,
        };
        let path = m.write(&self.out)?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Cmd::GenDemos { common, episodes } => {
            let mut run = Run::start("gen-demos", &common)?;
            if let Some(n) = episodes {
                run.cfg.demo_episodes = n;
            }
            let demos = run.cfg.demonstrations()?;
            let audit = audit_demonstrations(&run.cfg.train.env, &demos)?;
            if !audit.is_clean() {
                return Err(format!("demonstrations failed the audit: {:?}", audit.violations).into());
            }
            write_trajectories(&run.path("demos.jsonl"), &demos)?;
            write_json(&run.path("audit.json"), &audit)?;
            log::info!("{} trajectories, {} records", demos.len(), audit.records);
            run.finish()
        }
        Cmd::PretrainDynamics { common, demos } => {
            let mut run = Run::start("pretrain-dynamics", &common)?;
            let demos = demos_for(&run.cfg, demos.as_deref())?;
            let examples = build_dynamics_dataset(&run.cfg.train.schema(), &demos)?;
            write_dynamics_dataset(&run.path("dynamics_dataset.jsonl"), &examples)?;
            let (model, report) = pretrain_for(&run.cfg.train, &demos)?;
            model.save(&run.path("dynamics.json"))?;
            write_json(&run.path("pretrain_report.json"), &report)?;
            log::info!("final objective {}", report.final_objective);
            run.finish()
        }
        Cmd::Train {
            common,
            option,
            demos,
            dynamics,
            resume,
        } => {
            let mut run = Run::start("train", &common)?;
            if let Some(o) = option {
                run.cfg.train.option = match o {
                    OptionArg::One => TrainOption::Pretrained,
                    OptionArg::Two => TrainOption::Iterative,
                    OptionArg::Three => TrainOption::Joint,
                };
            }
            if dynamics.is_some() && run.cfg.train.option != TrainOption::Pretrained {
                return Err("--dynamics applies only to option 1".into());
            }
            let demos = demos_for(&run.cfg, demos.as_deref())?;
            let pretrained = dynamics.as_deref().map(DynamicsModel::load).transpose()?;
            let out = train(
                &run.cfg.train,
                &demos,
                TrainOptions {
                    out_dir: Some(run.out.clone()),
                    resume,
                    pretrained,
                },
            )?;
            run.artifacts.extend([LOG_FILE.to_string(), "checkpoints".to_string()]);
            if let Some(last) = out.log.last() {
                log::info!("finished {} iterations, final d_loss {}", out.log.len(), last.d_loss);
            }
            run.finish()
        }
        Cmd::Rollout {
            common,
            checkpoint,
            horizon,
        } => {
            let mut run = Run::start("rollout", &common)?;
            let (policy, dynamics, tcfg) = load_checkpoint_dir(&checkpoint)?;
            run.cfg.train = TrainConfig { workers: run.cfg.train.workers, ..tcfg };
            let constraints = match &dynamics {
                Some(m) => Constraints::Model(m),
                None => Constraints::Joint,
            };
            let env_cfg = &run.cfg.train.env;
            let t0 = run.cfg.eval.t0.unwrap_or(policy.dims.arch.window.saturating_sub(1));
            if t0 >= env_cfg.max_steps() {
                return Err(format!("t0 {t0} is past max_steps {}", env_cfg.max_steps()).into());
            }
            let h = horizon.unwrap_or(run.cfg.eval.horizon).min(env_cfg.max_steps() - t0).max(1);
            let shared = Arc::new(env_cfg.clone());
            let (mut generated, mut truth) = (Vec::new(), Vec::new());
            for (e, seed) in test_seeds(env_cfg, run.cfg.eval.test_episodes).into_iter().enumerate() {
                let (trajs, snap) = expert_episode(Arc::clone(&shared), seed, Some(t0))?;
                let mut snap = snap.ok_or("snapshot clock not reached")?;
                let initial: Vec<Vec<AgentState>> =
                    trajs.iter().map(|t| t.records[..=t0].iter().map(|r| r.state.clone()).collect()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.eval.seed ^ e as u64);
                let gen = generate(&policy, constraints, &mut snap, &initial, h, run.cfg.train.g_sampling, &mut rng)?;
                let base = e * env_cfg.n_agents();
                generated.extend(gen.into_iter().map(|mut t| {
                    t.agent_id += base;
                    t
                }));
                truth.extend(trajs.into_iter().map(|mut t| {
                    t.records = t.records[t0..t0 + h].to_vec();
                    t.agent_id += base;
                    t
                }));
            }
            let audit = audit_trajectories(env_cfg, &generated)?;
            write_trajectories(&run.path("generated.jsonl"), &generated)?;
            write_trajectories(&run.path("truth.jsonl"), &truth)?;
            write_json(&run.path("audit.json"), &audit)?;
            if !audit.is_clean() {
                return Err(format!("generated trajectories failed the audit: {:?}", audit.violations).into());
            }
            run.finish()
        }
        Cmd::Evaluate {
            common,
            checkpoint,
            task,
            demos,
        } => {
            let mut run = Run::start("evaluate", &common)?;
            let (policy, dynamics, tcfg) = load_checkpoint_dir(&checkpoint)?;
            run.cfg.train = TrainConfig { workers: run.cfg.train.workers, ..tcfg };
            if let Some(h) = task.1 {
                run.cfg.eval.horizon = h;
            }
            let demos = demos_for(&run.cfg, demos.as_deref())?;
            let markov = markov_fit(&demos)?;
            let p = Predictor {
                policy: &policy,
                constraints: match &dynamics {
                    Some(m) => Constraints::Model(m),
                    None => Constraints::Joint,
                },
                g_sampling: run.cfg.train.g_sampling,
            };
            let report = evaluate(&run.cfg.train.env, &p, &markov, &run.cfg.eval, task.0)?;
            let log_path = checkpoint.join(LOG_FILE);
            let log = if log_path.exists() { Some(read_log(&log_path)?) } else { None };
            let files = write_report(&run.out, std::slice::from_ref(&report), log.as_deref())?;
            run.artifacts.extend(["report.json".to_string(), "report.md".to_string()]);
            if files.curves.is_some() {
                run.artifacts.push("curves.csv".into());
            }
            print!("{}", render_table(&[report]));
            run.finish()
        }
        Cmd::Report { common, reports, log } => {
            let mut run = Run::start("report", &common)?;
            let mut all = Vec::new();
            for p in &reports {
                all.extend(read_report(p)?);
            }
            let log = log.as_deref().map(read_log).transpose()?;
            let files = write_report(&run.out, &all, log.as_deref())?;
            run.artifacts.extend(["report.json".to_string(), "report.md".to_string()]);
            if files.curves.is_some() {
                run.artifacts.push("curves.csv".into());
            }
            print!("{}", render_table(&all));
            run.finish()
        }
    }
}


fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOVESD_LOG", "info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
