//! Trains MCGOPPO and its communication-free MAPPO reduction on
//! SignalSpread and compares greedy success rates. Only the speaker sees the
//! goal, so the listener can only succeed by reading the speaker's message.
//!
//! ```bash
//! cargo run --release --example train_signal_spread -- 20000
//! ```

use mcgoppo::policy::Mode;
use mcgoppo::run::{train_in_memory, RunConfig};

pub fn run_with(total_steps: usize) -> mcgoppo::Result<()> {
    for mode in [Mode::Mcgoppo, Mode::Mappo] {
        let mut cfg = RunConfig { total_steps, eval_episodes: 200, ..Default::default() };
        cfg.model.mode = mode;
        let out = train_in_memory(&cfg)?;
        for row in out.metrics.iter().step_by((out.metrics.len() / 5).max(1)) {
            println!(
                "{:>8} step {:>6}: reward {:>7.3}, success {:.2}, entropy {:.3}",
                mode.name(),
                row.step,
                row.mean_episode_reward,
                row.success_rate,
                row.entropy
            );
        }
        let e = out.eval.expect("eval_episodes > 0");
        println!("{:>8} greedy success {:.3} over {} episodes", mode.name(), e.success_rate, e.episodes);
    }
    Ok(())
}

pub fn run() -> mcgoppo::Result<()> {
    run_with(2048)
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    let steps = std::env::args().nth(1).map_or(Ok(20_000), |s| s.parse()).expect("steps must be an integer");
    run_with(steps)
}
