use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcgoppo::run::{ablate, evaluate_checkpoint, train, AblationGrid, RunConfig};

#[derive(Parser)]
#[command(version, about = "Multi-agent PPO with scheduled communication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, checkpoints and the frozen config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted override, e.g. `train.lr=0.001`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy evaluation of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every grid cell for every seed and write comparison tables.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> mcgoppo::Result<()> {
    match cmd {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let out = train(&cfg)?;
            if let Some(r) = out.metrics.last() {
                println!(
                    "step {}: mean episode reward {:.3}, success rate {:.3}",
                    r.step, r.mean_episode_reward, r.success_rate
                );
            }
            if let Some(e) = out.eval {
                println!(
                    "eval over {} episodes: success rate {:.3}, mean reward {:.3}",
                    e.episodes, e.success_rate, e.mean_reward
                );
            }
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Evaluate {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let s = evaluate_checkpoint(&checkpoint, &env, episodes, seed)?;
            println!("episodes,mean_reward,std_reward,success_rate,mean_length");
            println!(
                "{},{},{},{},{}",
                s.episodes, s.mean_reward, s.std_reward, s.success_rate, s.mean_length
            );
        }
        Command::Ablate { config, grid } => {
            let base = RunConfig::load(&config, &[])?;
            let grid = AblationGrid::load(&grid)?;
            let report = ablate(&base, &grid, true)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("label,seeds_ok,success_mean,success_std,reward_mean,reward_std");
            for s in &report.summary {
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.4}",
                    s.label, s.seeds_ok, s.success_mean, s.success_std, s.reward_mean, s.reward_std
                );
            }
            println!("tables in {}", base.output_dir.display());
        }
    }
    Ok(())
}
