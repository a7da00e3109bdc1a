use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::comm::MessagePool;
use crate::env::{EnvConfig, EnvSpec, StepResult};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::policy::ActorCritic;
use crate::rollout::{decide, Sampling};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub success_rate: f64,
    pub mean_length: f64,
}

impl EvalSummary {
    fn from_episodes(eps: &[(f64, bool, usize)]) -> Self {
        if eps.is_empty() {
            return Self {
                episodes: 0,
                mean_reward: 0.0,
                std_reward: 0.0,
                success_rate: 0.0,
                mean_length: 0.0,
            };
        }
        let n = eps.len() as f64;
        let mean = eps.iter().map(|e| e.0).sum::<f64>() / n;
        let var = eps.iter().map(|e| (e.0 - mean).powi(2)).sum::<f64>() / n;
        Self {
            episodes: eps.len(),
            mean_reward: mean,
            std_reward: var.sqrt(),
            success_rate: eps.iter().filter(|e| e.1).count() as f64 / n,
            mean_length: eps.iter().map(|e| e.2 as f64).sum::<f64>() / n,
        }
    }
}

fn check_compatible(model: &EnvSpec, env: &EnvSpec) -> Result<()> {
    if model.n_agents != env.n_agents
        || model.action_names != env.action_names
        || model.obs != env.obs
        || model.state != env.state
    {
        return Err(Error::Config(format!(
            "checkpoint was built for {} ({} agents, obs width {}), environment is {} ({} agents, obs width {})",
            model.name,
            model.n_agents,
            model.obs_width(),
            env.name,
            env.n_agents,
            env.obs_width()
        )));
    }
    Ok(())
}

/// Runs `episodes` episodes with a per-step action chooser.
fn run_episodes<F>(env: &EnvConfig, episodes: usize, seed: u64, mut act: F) -> Result<EvalSummary>
where
    F: FnMut(&StepResult, &mut MessagePool, i64) -> Result<Vec<usize>>,
{
    let mut e = env.build()?;
    let n = e.spec().n_agents;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut cur = e.reset(seeds.random());
        let mut pool = MessagePool::new(n, 1);
        let (mut total, mut len) = (0.0, 0usize);
        loop {
            let actions = act(&cur, &mut pool, len as i64)?;
            cur = e.step(&actions)?;
            total += cur.rewards[0];
            len += 1;
            if cur.done {
                out.push((total, cur.success, len));
                break;
            }
        }
    }
    Ok(EvalSummary::from_episodes(&out))
}

/// Greedy (argmax) evaluation with decentralised execution.
pub fn evaluate(model: &ActorCritic, env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary> {
    check_compatible(&model.spec, &env.spec()?)?;
    let d_obs = model.spec.obs_width();
    let d_m = model.comm.as_ref().map_or(1, |c| c.message_dim);
    run_episodes(env, episodes, seed, |cur, pool, clock| {
        if clock == 0 {
            *pool = MessagePool::new(model.n_agents(), d_m);
        }
        let obs = crate::rollout::stack_observations(&[cur], d_obs)?;
        let dec = decide(
            model,
            &obs,
            &cur.masks,
            std::slice::from_mut(pool),
            &[clock],
            Sampling::<ChaCha8Rng>::Greedy,
        )?;
        Ok(dec.actions)
    })
}

/// Uniform choice among each agent's legal actions.
pub fn random_policy(env: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f7a11);
    run_episodes(env, episodes, seed, |cur, _, _| {
        Ok(cur
            .masks
            .iter()
            .map(|m| {
                let legal: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
                legal[rng.random_range(0..legal.len())]
            })
            .collect())
    })
}

/// Loads a checkpoint and evaluates it on `env_name`. The environment
/// parameters recorded at training time are reused when the name matches.
pub fn evaluate_checkpoint(path: impl AsRef<Path>, env_name: &str, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let ck = Checkpoint::load(path)?;
    let model = ActorCritic::from_checkpoint(&ck)?;
    let recorded = ck
        .meta("env")
        .and_then(|s| serde_json::from_str::<EnvConfig>(s).ok())
        .filter(|e| e.name() == env_name);
    let env = match recorded {
        Some(e) => e,
        None => EnvConfig::from_name(env_name)?,
    };
    evaluate(&model, &env, episodes, seed)
}
