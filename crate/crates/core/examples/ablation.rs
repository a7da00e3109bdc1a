//! A small ablation grid on MicroSkirmish: the two baselines and MCGOPPO
//! with one critic component switched off, over two seeds.
//!
//! ```bash
//! cargo run --release --example ablation -- 20000
//! ```

use mcgoppo::env::EnvConfig;
use mcgoppo::run::{ablate, AblationGrid, RunConfig};

const GRID: &str = r#"
seeds = [0, 1]
modes = ["ippo", "mappo", "mcgoppo"]
eval_episodes = 20

[[cells]]
mode = "mcgoppo"
toggles = { deep_shallow = false }
"#;

pub fn run_with(total_steps: usize) -> mcgoppo::Result<()> {
    let base = RunConfig {
        total_steps,
        env: EnvConfig::from_name("micro_skirmish")?,
        ..Default::default()
    };
    let report = ablate(&base, &AblationGrid::from_toml_str(GRID)?, false)?;
    for r in &report.runs {
        println!("{:<24} seed {} {:>4}: eval reward {:.3}", r.label, r.seed, r.status, r.mean_reward);
    }
    for s in &report.summary {
        println!("{:<24} reward {:.3} ± {:.3} over {} seeds", s.label, s.reward_mean, s.reward_std, s.seeds_ok);
    }
    Ok(())
}

pub fn run() -> mcgoppo::Result<()> {
    run_with(512)
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    let steps = std::env::args().nth(1).map_or(Ok(20_000), |s| s.parse()).expect("steps must be an integer");
    run_with(steps)
}
