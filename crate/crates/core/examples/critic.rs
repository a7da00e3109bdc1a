//! Per-agent values from the three critic variants on one MicroSkirmish
//! state, plus the structured critic's attention over agent rows.
//!
//! ```bash
//! cargo run --release --example critic
//! ```

use mcgoppo::comm::layer_count;
use mcgoppo::env::EnvConfig;
use mcgoppo::nn::Graph;
use mcgoppo::policy::{ActorCritic, CriticInput, Mode, ModelConfig};

pub fn run() -> mcgoppo::Result<()> {
    let env_cfg = EnvConfig::from_name("micro_skirmish")?;
    let spec = env_cfg.spec()?;
    let step = env_cfg.build()?.reset(11);
    println!(
        "state: {} agent rows of width {}, enemy segment of {} values, {} env features",
        spec.state.n_agents,
        spec.state.agent_width,
        spec.state.enemy_segment_width(),
        spec.state.env_width
    );
    for mode in [Mode::Ippo, Mode::Mappo, Mode::Mcgoppo] {
        let cfg = ModelConfig { mode, ..Default::default() };
        let m = ActorCritic::new(&spec, &cfg, 0)?;
        let v = m.critic.critic_forward(&m.critic_store, &step.state, &step.observations)?;
        println!(
            "{:>8}: critic input width {:>3}, {:>6} parameters, values {:?}",
            mode.name(),
            m.critic.input_width(),
            m.critic_store.num_scalars(),
            v
        );
        if mode == Mode::Mcgoppo {
            let unit = m.critic.attention().expect("structured critic has attention");
            let input = CriticInput::from_step(&step.state, &step.observations)?;
            let mut g = Graph::new(&m.critic_store);
            let obs = g.input(input.obs.clone());
            let rows = g.input(input.agent_rows());
            let c = unit.forward(&mut g, obs, rows, spec.n_agents);
            let probs = g.attention_probs(c).expect("attention node");
            for i in 0..probs.rows() {
                println!("          agent {i} attention over agent rows {:.3?}", probs.row(i));
            }
            println!(
                "          deep path {} layers, shallow path {} layer",
                layer_count(&m.critic_store, "critic.deep."),
                layer_count(&m.critic_store, "critic.shallow")
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
