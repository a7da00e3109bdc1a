//! Steps both toy environments by hand and measures a uniform random policy.
//!
//! ```bash
//! cargo run --release --example environments
//! ```

use mcgoppo::env::{actions, EnvConfig};
use mcgoppo::run::random_policy;

pub fn run() -> mcgoppo::Result<()> {
    for name in ["signal_spread", "micro_skirmish"] {
        let cfg = EnvConfig::from_name(name)?;
        let mut env = cfg.build()?;
        let spec = env.spec().clone();
        let first = env.reset(7);
        println!(
            "{name}: {} agents, {} enemies, actions {:?}, obs width {}, state width {}",
            spec.n_agents,
            spec.n_enemies,
            spec.action_names,
            spec.obs_width(),
            spec.state_width()
        );
        println!("  agent 0 observation: {:?}", first.observations[0].flatten());
        println!("  agent 0 legal actions: {:?}", first.masks[0]);

        let noop = vec![actions::NOOP; spec.n_agents];
        let r = env.step(&noop)?;
        println!("  reward after everyone waits: {:.3}", r.rewards[0]);

        let s = random_policy(&cfg, 1000, 0)?;
        println!(
            "  random policy over {} episodes: success {:.3}, mean reward {:.3} ± {:.3}, length {:.1}",
            s.episodes, s.success_rate, s.mean_reward, s.std_reward, s.mean_length
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
