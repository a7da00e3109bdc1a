//! The communication path for one step of MicroSkirmish: every agent
//! publishes a message and a scalar weight, each agent reads from its
//! top-weighted partner, and attention fuses what was read into `z`.
//!
//! ```bash
//! cargo run --release --example communication
//! ```

use mcgoppo::comm::{schedule, CommConfig, CommNet, MessagePool, SchedulingWeights};
use mcgoppo::env::EnvConfig;
use mcgoppo::nn::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> mcgoppo::Result<()> {
    let mut env = EnvConfig::from_name("micro_skirmish")?.build()?;
    let step = env.reset(3);
    let n = step.observations.len();
    let obs: Vec<Vec<f64>> = step.observations.iter().map(|o| o.flatten()).collect();

    let mut store = ParamStore::new();
    let cfg = CommConfig::default();
    let net = CommNet::new(&mut store, obs[0].len(), &cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let k = cfg.partners(n)?;
    println!("message width {}, attention width {}, partners per agent {k}", net.message_dim, net.attn_dim);

    // Phase one: publish.
    let mut pool = MessagePool::new(n, net.message_dim);
    let mut raw = Vec::with_capacity(n);
    for (i, o) in obs.iter().enumerate() {
        pool.write(net.encode_message(&store, o, i, 0)?)?;
        raw.push(net.generate_weight(&store, o)?);
    }
    let weights = SchedulingWeights::new(raw)?;
    println!("raw weights {:?}", weights.raw);
    println!("normalised  {:?}", weights.normalized);

    // Phase two: schedule, read, fuse.
    for (i, o) in obs.iter().enumerate() {
        let partners = schedule(&weights, k, i)?;
        let received: Vec<_> = partners.iter().map(|&j| pool.read(j)).collect::<Result<_, _>>()?;
        let (z, attn) = net.process_messages_with_probs(&store, o, &received)?;
        println!(
            "agent {i} reads {partners:?}, attention {attn:?}, |z| = {:.4}",
            z.iter().map(|v| v * v).sum::<f64>().sqrt()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mcgoppo::Result<()> {
    run()
}
