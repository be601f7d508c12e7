//! `crl`: command-line front end for continual training and evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use continual_rl::bandit::{exp3_eta, BanditConfig};
use continual_rl::envs::{make_task, TaskSpec};
use continual_rl::harness::{
    bandit_bench, evaluate_task, generalization_eval, interference_demo, train_continual, unseen_crossing_seeds,
    write_csv_file, Checkpoint, EvalSettings, ExperimentConfig, Method,
};
use continual_rl::rng;
use continual_rl::Error;

#[derive(Parser)]
#[command(name = "crl", version, about = "Continual Q-learning with per-task heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (key = value with [section] headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed; writes metrics CSV, manifest and checkpoint per seed.
    Train(Common),
    /// Evaluate a checkpoint on its training tasks with the configured strategies.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on unseen crossing layouts.
    Generalize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the supervised interference demo.
    InterferenceDemo(Common),
    /// Concentration test of the bandit on a synthetic 3-arm problem.
    BanditBench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 500)]
        updates: usize,
        /// Learning rate; defaults to the Exp3 rate for 3 arms over `updates`.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Print a task's grid layout.
    Render {
        #[command(flatten)]
        common: Common,
        /// Task as `family/seed/goal`.
        #[arg(long, default_value = "four_rooms_conflict/0/0")]
        task: String,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| match e {
            Error::Io { path, source } => Error::ConfigField {
                field: "--config".into(),
                message: format!("{}: {source}", path.display()),
            },
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            for &seed in &cfg.seeds {
                let quiet = common.quiet;
                let mut log = |line: String| {
                    if !quiet {
                        eprintln!("[seed {seed}] {line}");
                    }
                };
                let run = train_continual(&cfg, seed, &mut log)?;
                write_csv_file(&common.out.join(format!("metrics_seed{seed}.csv")), &run.records)?;
                run.manifest.write(&common.out.join(format!("manifest_seed{seed}.json")))?;
                Checkpoint {
                    method: cfg.method,
                    seed,
                    tasks: run.tasks.clone(),
                    agent: run.agent,
                    regularizer: run.regularizer,
                }
                .save(&common.out.join(format!("checkpoint_seed{seed}.bin")))?;
                if !quiet {
                    for s in &run.manifest.summaries {
                        println!(
                            "seed {seed} {} final {:?} cumulative {:.3}",
                            s.selection, s.final_success, s.cumulative_success
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let seed = cfg.seeds[0];
            for &selection in &cfg.selections {
                let mut r = rng::seeded(rng::derive(seed, rng::stream::EVAL), selection as u64);
                let settings = EvalSettings {
                    selection,
                    bandit: cfg.bandit(),
                    reward_scale: cfg.reward.scale,
                };
                for (task, spec) in ck.tasks.iter().enumerate() {
                    let head = match ck.method {
                        Method::ExpReplay => 0,
                        _ => task,
                    };
                    let o = evaluate_task(&ck.agent, spec, Some(head), &settings, cfg.eval_episodes, &mut r)?;
                    println!(
                        "{selection} task {task} ({spec}): success {:.3} return {:.3}",
                        o.success_rate, o.mean_return
                    );
                }
            }
            Ok(())
        }
        Command::Generalize { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let seeds = unseen_crossing_seeds(&ck.tasks, cfg.generalize.n_unseen, cfg.generalize.unseen_seed_start)?;
            let rows = generalization_eval(
                &ck.agent,
                &ck.tasks,
                &seeds,
                &cfg.selections,
                cfg.generalize.episodes_per_task,
                cfg.bandit(),
                cfg.reward.scale,
                cfg.seeds[0],
            )?;
            ensure_out(&common.out)?;
            write_json(&common.out.join("generalization.json"), &rows)?;
            for r in rows {
                println!("{}: {}/{} = {:.3}", r.selection, r.successes, r.episodes, r.success_rate);
            }
            Ok(())
        }
        Command::InterferenceDemo(common) => {
            let cfg = load_config(&common)?;
            let report = interference_demo(&cfg.interference, cfg.seeds[0])?;
            ensure_out(&common.out)?;
            write_json(&common.out.join("interference.json"), &report)?;
            println!("noise floor {:.4}", report.noise_floor);
            for v in &report.variants {
                println!(
                    "{}: mse(+) {:.4} mse(-) {:.4}",
                    v.variant.name(),
                    v.final_mse[0],
                    v.final_mse[1]
                );
            }
            Ok(())
        }
        Command::BanditBench {
            common,
            runs,
            updates,
            eta,
        } => {
            let cfg = load_config(&common)?;
            if updates == 0 {
                return Err(Error::ConfigField {
                    field: "--updates".into(),
                    message: "must be at least 1".into(),
                });
            }
            let bcfg = BanditConfig {
                eta: eta.unwrap_or_else(|| exp3_eta(3, updates)),
                cap: cfg.bandit_cap,
            };
            let (hits, n) = bandit_bench(runs, updates, 0.9, bcfg)?;
            println!("eta {:.4}: p(best) > 0.9 after {updates} updates in {hits}/{n} runs", bcfg.eta);
            Ok(())
        }
        Command::Render { task, .. } => {
            let spec: TaskSpec = task.parse().map_err(|m: String| Error::ConfigField {
                field: "task".into(),
                message: m,
            })?;
            let mut env = make_task(&spec)?;
            env.reset();
            print!("{}", env.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
