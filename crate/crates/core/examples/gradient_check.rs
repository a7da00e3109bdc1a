//! Finite-difference check of the policy gradient through communication:
//! a loss on agent 0's logits must move agent 1's message encoder.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use mcgoppo::env::EnvConfig;
use mcgoppo::nn::{grad_check, Graph, Matrix, ParamGrads, ParamStore};
use mcgoppo::policy::{ActorCritic, ModelConfig};

pub fn run() -> mcgoppo::Result<()> {
    let env_cfg = EnvConfig::from_name("signal_spread")?;
    let spec = env_cfg.spec()?;
    let mut model = ActorCritic::new(&spec, &ModelConfig { hidden: 8, ..Default::default() }, 5)?;
    let step = env_cfg.build()?.reset(2);
    let flat: Vec<f64> = step.observations.iter().flat_map(|o| o.flatten()).collect();
    let obs = Matrix::from_vec(spec.n_agents, spec.obs_width(), flat)?;
    let net = model.clone();

    // Sum of squared logits with agents reading each other.
    let loss = |s: &ParamStore| -> (f64, ParamGrads) {
        let mut g = Graph::new(s);
        let x = g.input(obs.clone());
        let l = net.policy_logits_from_partners(&mut g, x, &[1, 0]);
        let lv = g.value(l).clone();
        let mut seed = lv.clone();
        seed.scale(2.0);
        (lv.sum_sq(), g.backward(&[(l, seed)]).params)
    };
    let (value, grads) = loss(&model.actor_store);
    let enc = net.comm.as_ref().expect("communication on").encoder.layers[0].weight;
    println!("loss {value:.6}, |d loss / d encoder| = {:.3e}", grads.get(enc).map_or(0.0, |g| g.sum_sq().sqrt()));
    let report = grad_check(&mut model.actor_store, 1e-6, loss);
    println!(
        "checked {} entries, max relative error {:.2e} (worst {:?})",
        report.entries_checked, report.max_rel_error, report.worst_param
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
