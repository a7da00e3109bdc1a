//! On-policy sample collection over parallel environment copies with
//! two-phase communication at every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{schedule, Message, MessagePool, SchedulingWeights};
use crate::env::{EnvConfig, MultiAgentEnv, StepResult};
use crate::error::{Error, Result};
use crate::nn::{Graph, Matrix};
use crate::policy::{sample_action, ActorCritic, CriticInput, PolicyDistribution};
use crate::ppo::{Segment, TrainConfig, TrajectoryBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub steps_per_update: usize,
    pub n_envs: usize,
    /// Bootstrap the return of an unfinished episode with the critic.
    pub bootstrap: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            steps_per_update: 64,
            n_envs: 4,
            bootstrap: true,
        }
    }
}

impl RolloutConfig {
    /// Timesteps per batch, `B` of the update.
    pub fn batch_size(&self) -> usize {
        self.steps_per_update * self.n_envs
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_update == 0 || self.n_envs == 0 {
            return Err(Error::Config("rollout.steps_per_update and rollout.n_envs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub reward: f64,
    pub success: bool,
    pub length: usize,
}

pub enum Sampling<'a, R: Rng + ?Sized> {
    Greedy,
    Sample(&'a mut R),
}

/// Actions chosen for every agent of every environment copy in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// `rows·k` partner agent indices.
    pub partners: Vec<usize>,
    /// `rows·k` step tags of the messages read.
    pub message_tags: Vec<i64>,
}

/// Publishes every agent's message and weight, then schedules, reads, fuses
/// and picks an action. `obs` stacks `pools.len()` copies of `n` agents.
pub fn decide<R: Rng + ?Sized>(
    model: &ActorCritic,
    obs: &Matrix,
    masks: &[Vec<bool>],
    pools: &mut [MessagePool],
    clocks: &[i64],
    sampling: Sampling<'_, R>,
) -> Result<StepDecision> {
    let n = model.n_agents();
    let copies = pools.len();
    assert_eq!(obs.rows(), copies * n, "decide: observation rows");
    let k = model.k;
    let mut g = Graph::new(&model.actor_store);
    let x = g.input(obs.clone());
    let mut partners = Vec::with_capacity(obs.rows() * k);
    let mut message_tags = Vec::with_capacity(obs.rows() * k);
    let received = match &model.comm {
        Some(comm) if k > 0 => {
            let m = comm.messages(&mut g, x);
            let w = comm.weights(&mut g, x);
            let (mv, wv) = (g.value(m), g.value(w));
            for (e, pool) in pools.iter_mut().enumerate() {
                for i in 0..n {
                    pool.write(Message {
                        payload: mv.row(e * n + i).to_vec(),
                        source_agent: i,
                        step_tag: clocks[e],
                    })?;
                }
            }
            let mut payloads = Vec::with_capacity(obs.rows() * k * comm.message_dim);
            for (e, pool) in pools.iter().enumerate() {
                let sw = SchedulingWeights::new(wv.data()[e * n..(e + 1) * n].to_vec())?;
                for i in 0..n {
                    for j in schedule(&sw, k, i)? {
                        let msg = pool.read(j)?;
                        payloads.extend_from_slice(&msg.payload);
                        partners.push(j);
                        message_tags.push(msg.step_tag);
                    }
                }
            }
            Some(g.input(Matrix::from_vec(obs.rows() * k, comm.message_dim, payloads)?))
        }
        _ => None,
    };
    let logits = model.policy_logits(&mut g, x, received);
    let lv = g.value(logits);
    let mut actions = Vec::with_capacity(obs.rows());
    let mut log_probs = Vec::with_capacity(obs.rows());
    let mut sampling = sampling;
    for r in 0..obs.rows() {
        let dist = PolicyDistribution::masked(lv.row(r).to_vec(), Some(masks[r].clone()))?;
        let (a, lp) = match &mut sampling {
            Sampling::Greedy => {
                let a = dist.argmax();
                (a, dist.log_prob(a))
            }
            Sampling::Sample(rng) => sample_action(&dist, *rng),
        };
        actions.push(a);
        log_probs.push(lp);
    }
    Ok(StepDecision {
        actions,
        log_probs,
        partners,
        message_tags,
    })
}

/// Per-agent values for stacked timesteps.
pub fn critic_values(model: &ActorCritic, obs: &Matrix, states: &Matrix) -> Result<Vec<f64>> {
    let input = CriticInput::new(obs.clone(), states.clone(), model.spec.state)?;
    let mut g = Graph::new(&model.critic_store);
    let v = model.critic.values(&mut g, &input);
    Ok(g.value(v).data().to_vec())
}

pub(crate) fn stack_observations(results: &[&StepResult], width: usize) -> Result<Matrix> {
    let agents: usize = results.iter().map(|r| r.observations.len()).sum();
    let mut flat = Vec::with_capacity(agents * width);
    for r in results {
        for o in &r.observations {
            o.write_into(&mut flat);
        }
    }
    let m = Matrix::from_vec(agents, width, flat)?;
    if !m.is_finite() {
        return Err(Error::NonFinite("environment produced a non-finite observation".into()));
    }
    Ok(m)
}

fn stack_states(results: &[&StepResult], width: usize) -> Result<Matrix> {
    let mut flat = Vec::with_capacity(results.len() * width);
    for r in results {
        flat.extend(r.state.flatten());
    }
    Matrix::from_vec(results.len(), width, flat)
}

/// Parallel environment copies that persist across collections, so episodes
/// continue from one batch into the next.
pub struct Rollout {
    envs: Vec<Box<dyn MultiAgentEnv>>,
    current: Vec<StepResult>,
    pools: Vec<MessagePool>,
    seed_streams: Vec<ChaCha8Rng>,
    clocks: Vec<i64>,
    ep_reward: Vec<f64>,
    ep_len: Vec<usize>,
    finished: Vec<EpisodeStats>,
}

impl Rollout {
    /// Copy `e` draws its reset seeds from its own stream derived from `seed`.
    pub fn new(env: &EnvConfig, n_envs: usize, message_dim: usize, seed: u64) -> Result<Self> {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(n_envs);
        let mut current = Vec::with_capacity(n_envs);
        let mut seed_streams = Vec::with_capacity(n_envs);
        for _ in 0..n_envs {
            let mut stream = ChaCha8Rng::seed_from_u64(master.random());
            let mut e = env.build()?;
            current.push(e.reset(stream.random()));
            envs.push(e);
            seed_streams.push(stream);
        }
        let n = envs.first().map_or(0, |e| e.spec().n_agents);
        Ok(Self {
            pools: (0..n_envs).map(|_| MessagePool::new(n, message_dim)).collect(),
            envs,
            current,
            seed_streams,
            clocks: vec![0; n_envs],
            ep_reward: vec![0.0; n_envs],
            ep_len: vec![0; n_envs],
            finished: Vec::new(),
        })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    /// Episodes completed since the last call.
    pub fn drain_episodes(&mut self) -> Vec<EpisodeStats> {
        std::mem::take(&mut self.finished)
    }

    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        model: &ActorCritic,
        cfg: &RolloutConfig,
        train: &TrainConfig,
        rng: &mut R,
    ) -> Result<TrajectoryBatch> {
        cfg.validate()?;
        if cfg.n_envs != self.envs.len() {
            return Err(Error::Config(format!(
                "rollout built with {} envs, config asks for {}",
                self.envs.len(),
                cfg.n_envs
            )));
        }
        let spec = model.spec.clone();
        let (n, a_n, k) = (spec.n_agents, spec.n_actions(), model.k);
        let (d_obs, d_state) = (spec.obs_width(), spec.state_width());
        let (steps, ne) = (cfg.steps_per_update, cfg.n_envs);
        let t_total = steps * ne;
        let rows = t_total * n;
        let mut obs = Matrix::zeros(rows, d_obs);
        let mut states = Matrix::zeros(t_total, d_state);
        let mut actions = vec![0; rows];
        let mut masks = vec![false; rows * a_n];
        let mut old_log_probs = vec![0.0; rows];
        let mut rewards = vec![0.0; rows];
        let mut values = vec![0.0; rows];
        let mut dones = vec![false; t_total];
        let mut partners = vec![0; rows * k];
        let mut message_tags = vec![0; rows * k];
        let mut timesteps = vec![0; t_total];

        for s in 0..steps {
            let refs: Vec<&StepResult> = self.current.iter().collect();
            let x = stack_observations(&refs, d_obs)?;
            let st = stack_states(&refs, d_state)?;
            let step_masks: Vec<Vec<bool>> = self.current.iter().flat_map(|r| r.masks.clone()).collect();
            let dec = decide(model, &x, &step_masks, &mut self.pools, &self.clocks, Sampling::Sample(rng))?;
            let v = critic_values(model, &x, &st)?;
            for e in 0..ne {
                let t = e * steps + s;
                states.row_mut(t).copy_from_slice(st.row(e));
                timesteps[t] = self.clocks[e];
                let acts = &dec.actions[e * n..(e + 1) * n];
                let next = self.envs[e].step(acts)?;
                for i in 0..n {
                    let (src, dst) = (e * n + i, t * n + i);
                    obs.row_mut(dst).copy_from_slice(x.row(src));
                    actions[dst] = dec.actions[src];
                    old_log_probs[dst] = dec.log_probs[src];
                    values[dst] = v[src];
                    rewards[dst] = next.rewards[i];
                    masks[dst * a_n..(dst + 1) * a_n].copy_from_slice(&step_masks[src]);
                    partners[dst * k..(dst + 1) * k].copy_from_slice(&dec.partners[src * k..(src + 1) * k]);
                    message_tags[dst * k..(dst + 1) * k].copy_from_slice(&dec.message_tags[src * k..(src + 1) * k]);
                }
                if next.rewards.iter().any(|r| !r.is_finite()) {
                    return Err(Error::NonFinite(format!("environment {e} produced reward {:?}", next.rewards)));
                }
                self.clocks[e] += 1;
                self.ep_reward[e] += next.rewards[0];
                self.ep_len[e] += 1;
                dones[t] = next.done;
                if next.done {
                    self.finished.push(EpisodeStats {
                        reward: self.ep_reward[e],
                        success: next.success,
                        length: self.ep_len[e],
                    });
                    self.ep_reward[e] = 0.0;
                    self.ep_len[e] = 0;
                    let seed = self.seed_streams[e].random();
                    self.current[e] = self.envs[e].reset(seed);
                } else {
                    self.current[e] = next;
                }
            }
        }

        let bootstrap = if cfg.bootstrap {
            let refs: Vec<&StepResult> = self.current.iter().collect();
            let x = stack_observations(&refs, d_obs)?;
            critic_values(model, &x, &stack_states(&refs, d_state)?)?
        } else {
            vec![0.0; ne * n]
        };
        let segments = (0..ne)
            .map(|e| Segment {
                start: e * steps,
                len: steps,
                bootstrap: bootstrap[e * n..(e + 1) * n].to_vec(),
            })
            .collect();
        let mut batch = TrajectoryBatch {
            n_agents: n,
            n_actions: a_n,
            k,
            layout: spec.state,
            obs,
            states,
            actions,
            masks,
            old_log_probs,
            rewards,
            values,
            dones,
            partners,
            message_tags,
            timesteps,
            segments,
            returns: Vec::new(),
            advantages: Vec::new(),
        };
        batch.finalize(train);
        Ok(batch)
    }
}

/// One batch from `rollout` under the current parameters.
pub fn collect<R: Rng + ?Sized>(
    rollout: &mut Rollout,
    model: &ActorCritic,
    cfg: &RolloutConfig,
    train: &TrainConfig,
    rng: &mut R,
) -> Result<TrajectoryBatch> {
    rollout.collect(model, cfg, train, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Mode, ModelConfig};
    use crate::ppo::{minibatch_losses, Minibatch};

    fn setup(env: &str, mode: Mode, n_envs: usize, seed: u64) -> (ActorCritic, Rollout) {
        let cfg = EnvConfig::from_name(env).unwrap();
        let model = ActorCritic::new(
            &cfg.spec().unwrap(),
            &ModelConfig {
                mode,
                ..Default::default()
            },
            seed,
        )
        .unwrap();
        let d_m = model.comm.as_ref().map_or(1, |c| c.message_dim);
        let ro = Rollout::new(&cfg, n_envs, d_m, seed).unwrap();
        (model, ro)
    }

    #[test]
    fn batch_shapes() {
        let (model, mut ro) = setup("signal_spread", Mode::Mcgoppo, 2, 0);
        let rc = RolloutConfig {
            steps_per_update: 4,
            n_envs: 2,
            bootstrap: true,
        };
        let b = ro
            .collect(&model, &rc, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.obs.rows(), 16);
        for v in [&b.old_log_probs, &b.rewards, &b.values, &b.returns, &b.advantages] {
            assert_eq!(v.len(), 16);
        }
        assert_eq!(b.partners.len(), 16);
        assert_eq!(b.states.shape(), (8, model.spec.state_width()));
    }

    #[test]
    fn frozen_policy_collects_identically() {
        for mode in [Mode::Mcgoppo, Mode::Mappo] {
            let rc = RolloutConfig {
                steps_per_update: 20,
                n_envs: 3,
                bootstrap: true,
            };
            let run = || {
                let (model, mut ro) = setup("micro_skirmish", mode, 3, 5);
                ro.collect(&model, &rc, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(9))
                    .unwrap()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn stored_log_probs_match_reevaluation_and_tags_are_current() {
        let (model, mut ro) = setup("micro_skirmish", Mode::Mcgoppo, 2, 3);
        let rc = RolloutConfig {
            steps_per_update: 30,
            n_envs: 2,
            bootstrap: true,
        };
        let train = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Second batch exercises episodes that straddle collections.
        ro.collect(&model, &rc, &train, &mut rng).unwrap();
        let b = ro.collect(&model, &rc, &train, &mut rng).unwrap();
        let ts: Vec<usize> = (0..b.len()).collect();
        let mb = Minibatch::from_batch(&b, &ts, &b.advantages).unwrap();
        let res = minibatch_losses(&model, &mb, &train).unwrap();
        assert!((res.mean_ratio - 1.0).abs() < 1e-12);
        let mut g = Graph::new(&model.actor_store);
        let x = g.input(mb.input.obs.clone());
        let l = model.policy_logits_from_partners(&mut g, x, &mb.partners);
        for r in 0..mb.rows() {
            let d = PolicyDistribution::masked(g.value(l).row(r).to_vec(), Some(mb.masks[r].clone())).unwrap();
            assert!((d.log_prob(mb.actions[r]) - mb.old_log_probs[r]).abs() < 1e-9);
        }
        for t in 0..b.len() {
            for j in 0..b.n_agents * b.k {
                assert_eq!(b.message_tags[t * b.n_agents * b.k + j], b.timesteps[t]);
            }
            if t + 1 < b.len() && b.segments.iter().all(|s| s.start != t + 1) && !b.dones[t] {
                assert_eq!(b.timesteps[t + 1], b.timesteps[t] + 1);
            }
        }
        assert!(b.partners.chunks(1).enumerate().all(|(r, p)| p[0] != r % 3));
    }

    #[test]
    fn env_state_never_crosses_reset_without_done() {
        let (model, mut ro) = setup("signal_spread", Mode::Ippo, 2, 1);
        let rc = RolloutConfig {
            steps_per_update: 40,
            n_envs: 2,
            bootstrap: false,
        };
        let b = ro
            .collect(&model, &rc, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let layout = model.spec.state;
        let time_col = layout.env_range().end - 1;
        for seg in &b.segments {
            for t in seg.start..seg.start + seg.len - 1 {
                let (now, next) = (b.states[(t, time_col)], b.states[(t + 1, time_col)]);
                if next < now {
                    assert!(b.dones[t], "episode reset at {t} without a done flag");
                }
            }
        }
        let eps = ro.drain_episodes();
        assert!(!eps.is_empty());
        assert!(eps.iter().all(|e| e.length <= 8));
    }
}
