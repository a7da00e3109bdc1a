//! Returns, advantages, the clipped surrogate and clipped value objectives,
//! and the epoch/minibatch update loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Matrix, ParamGrads};
use crate::policy::{ActorCritic, CriticInput, PolicyDistribution, StateLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Value clipping range; `None` reuses `clip_eps`.
    pub value_clip_eps: Option<f64>,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_clip_eps: None,
            entropy_coef: 0.01,
            epochs: 4,
            minibatches: 2,
            lr: 5e-4,
            max_grad_norm: 10.0,
            normalize_advantages: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("train.gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("train.gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("train.clip_eps must lie in (0, 1)");
        }
        if self.value_clip_eps.is_some_and(|e| e <= 0.0 || !e.is_finite()) {
            return bad("train.value_clip_eps must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("train.entropy_coef must be non-negative");
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("train.epochs and train.minibatches must be positive");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("train.lr and train.max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn value_eps(&self) -> f64 {
        self.value_clip_eps.unwrap_or(self.clip_eps)
    }
}

/// A run of consecutive timesteps from one environment copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Per-agent value of the state after the last step, or zeros.
    pub bootstrap: Vec<f64>,
}

/// On-policy samples for `T` timesteps of `n` agents. Per-agent arrays are
/// indexed `t·n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub n_agents: usize,
    pub n_actions: usize,
    /// Partners read per agent.
    pub k: usize,
    pub layout: StateLayout,
    /// `(T·n, obs_dim)`
    pub obs: Matrix,
    /// `(T, state_width)`
    pub states: Matrix,
    pub actions: Vec<usize>,
    /// `T·n·A` legality flags.
    pub masks: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Episode ended with this step, including by the time limit.
    pub dones: Vec<bool>,
    /// `T·n·k` partner agent indices within the same timestep.
    pub partners: Vec<usize>,
    /// `T·n·k` step tags of the messages that were read.
    pub message_tags: Vec<i64>,
    /// Per-env step counter of each timestep.
    pub timesteps: Vec<i64>,
    pub segments: Vec<Segment>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.dones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dones.is_empty()
    }

    pub fn mask(&self, row: usize) -> Vec<bool> {
        self.masks[row * self.n_actions..(row + 1) * self.n_actions].to_vec()
    }

    /// Fills `returns` and `advantages` segment by segment, agent by agent.
    pub fn finalize(&mut self, cfg: &TrainConfig) {
        let n = self.n_agents;
        let rows = self.len() * n;
        self.returns = vec![0.0; rows];
        self.advantages = vec![0.0; rows];
        for seg in &self.segments {
            let dones = &self.dones[seg.start..seg.start + seg.len];
            for i in 0..n {
                let pick = |v: &[f64]| -> Vec<f64> {
                    (seg.start..seg.start + seg.len).map(|t| v[t * n + i]).collect()
                };
                let r = pick(&self.rewards);
                let mut v = pick(&self.values);
                let ret = discounted_returns(&r, dones, cfg.gamma, seg.bootstrap[i]);
                v.push(seg.bootstrap[i]);
                let adv = gae(&r, &v, dones, cfg.gamma, cfg.gae_lambda);
                for (j, t) in (seg.start..seg.start + seg.len).enumerate() {
                    self.returns[t * n + i] = ret[j];
                    self.advantages[t * n + i] = adv[j];
                }
            }
        }
    }
}

/// `R̂_t = Σ_{u≥t} γ^{u−t} r_u`, cut at `dones`, with `bootstrap` standing in
/// for the return after the final step when that step is not terminal.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64, bootstrap: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len(), "rewards and dones");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalised advantage estimates. `values` has one extra trailing entry
/// for bootstrapping.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values need a bootstrap entry");
    assert_eq!(rewards.len(), dones.len(), "rewards and dones");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        acc = delta + gamma * lambda * cont * acc;
        out[t] = acc;
    }
    out
}

/// Shifts and scales to zero mean and unit variance.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

pub fn ratio(logp_new: f64, logp_old: f64) -> f64 {
    (logp_new - logp_old).exp()
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`
pub fn surrogate(r: f64, a: f64, eps: f64) -> f64 {
    (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)
}

/// Negated clipped objective: `−(mean surrogate + σ·mean entropy)`.
pub fn actor_loss(ratios: &[f64], advantages: &[f64], entropies: &[f64], eps: f64, sigma: f64) -> f64 {
    assert_eq!(ratios.len(), advantages.len());
    assert_eq!(ratios.len(), entropies.len());
    let n = ratios.len() as f64;
    let surr: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| surrogate(r, a, eps))
        .sum();
    let ent: f64 = entropies.iter().sum();
    -(surr / n + sigma * ent / n)
}

/// `max((V − R̂)², (clip(V, V_old−ε, V_old+ε) − R̂)²)` for one sample.
pub fn value_term(v_new: f64, v_old: f64, ret: f64, eps: f64) -> f64 {
    let clipped = v_new.clamp(v_old - eps, v_old + eps);
    (v_new - ret).powi(2).max((clipped - ret).powi(2))
}

pub fn critic_loss(v_new: &[f64], v_old: &[f64], returns: &[f64], eps: f64) -> f64 {
    assert_eq!(v_new.len(), v_old.len());
    assert_eq!(v_new.len(), returns.len());
    let n = v_new.len() as f64;
    v_new
        .iter()
        .zip(v_old)
        .zip(returns)
        .map(|((&v, &o), &r)| value_term(v, o, r, eps))
        .sum::<f64>()
        / n
}

/// The rows of a batch selected by a set of timesteps.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub input: CriticInput,
    /// Partner rows local to this minibatch.
    pub partners: Vec<usize>,
    pub actions: Vec<usize>,
    pub masks: Vec<Vec<bool>>,
    pub old_log_probs: Vec<f64>,
    pub old_values: Vec<f64>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Minibatch {
    pub fn from_batch(batch: &TrajectoryBatch, timesteps: &[usize], advantages: &[f64]) -> Result<Self> {
        let (n, k) = (batch.n_agents, batch.k);
        let d = batch.obs.cols();
        let rows = timesteps.len() * n;
        let mut obs = Vec::with_capacity(rows * d);
        let mut states = Vec::with_capacity(timesteps.len() * batch.states.cols());
        let mut partners = Vec::with_capacity(rows * k);
        let mut picked = Vec::with_capacity(rows);
        for (lt, &t) in timesteps.iter().enumerate() {
            states.extend_from_slice(batch.states.row(t));
            for i in 0..n {
                let r = t * n + i;
                obs.extend_from_slice(batch.obs.row(r));
                picked.push(r);
                partners.extend(batch.partners[r * k..(r + 1) * k].iter().map(|&j| lt * n + j));
            }
        }
        let take = |v: &[f64]| -> Vec<f64> { picked.iter().map(|&r| v[r]).collect() };
        Ok(Self {
            input: CriticInput::new(
                Matrix::from_vec(rows, d, obs)?,
                Matrix::from_vec(timesteps.len(), batch.states.cols(), states)?,
                batch.layout,
            )?,
            partners,
            actions: picked.iter().map(|&r| batch.actions[r]).collect(),
            masks: picked.iter().map(|&r| batch.mask(r)).collect(),
            old_log_probs: take(&batch.old_log_probs),
            old_values: take(&batch.values),
            returns: take(&batch.returns),
            advantages: take(advantages),
        })
    }

    pub fn rows(&self) -> usize {
        self.actions.len()
    }
}

/// Losses, diagnostics and parameter gradients for one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchResult {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_grads: ParamGrads,
    pub critic_grads: ParamGrads,
}

pub fn minibatch_losses(model: &ActorCritic, mb: &Minibatch, cfg: &TrainConfig) -> Result<MinibatchResult> {
    let rows = mb.rows();
    let nf = rows as f64;
    let eps = cfg.clip_eps;
    let sigma = cfg.entropy_coef;

    let mut g = Graph::new(&model.actor_store);
    let obs = g.input(mb.input.obs.clone());
    let logits = model.policy_logits_from_partners(&mut g, obs, &mb.partners);
    let lv = g.value(logits);
    let mut seed = Matrix::zeros(rows, lv.cols());
    let (mut ratios, mut ents) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
    let mut clipped = 0usize;
    for r in 0..rows {
        let dist = PolicyDistribution::masked(lv.row(r).to_vec(), Some(mb.masks[r].clone()))?;
        let a = mb.actions[r];
        let ratio = ratio(dist.log_prob(a), mb.old_log_probs[r]);
        let adv = mb.advantages[r];
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        // d surrogate / d log π: r·A on the unclipped branch, 0 when clipped.
        let unclipped = ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let d_logp = if unclipped { ratio * adv } else { 0.0 };
        let gl = dist.grad_log_prob(a);
        let ge = dist.grad_entropy();
        for (j, s) in seed.row_mut(r).iter_mut().enumerate() {
            *s = -(d_logp * gl[j] + sigma * ge[j]) / nf;
        }
        ratios.push(ratio);
        ents.push(dist.entropy());
    }
    let a_loss = actor_loss(&ratios, &mb.advantages, &ents, eps, sigma);
    let actor_grads = g.backward(&[(logits, seed)]).params;

    let mut g = Graph::new(&model.critic_store);
    let values = model.critic.values(&mut g, &mb.input);
    let v: Vec<f64> = g.value(values).data().to_vec();
    let ve = cfg.value_eps();
    let c_loss = critic_loss(&v, &mb.old_values, &mb.returns, ve);
    let mut vseed = Matrix::zeros(rows, 1);
    for r in 0..rows {
        let (vn, vo, ret) = (v[r], mb.old_values[r], mb.returns[r]);
        let u = vn - ret;
        let c = vn.clamp(vo - ve, vo + ve) - ret;
        vseed[(r, 0)] = if u * u >= c * c { 2.0 * u / nf } else { 0.0 };
    }
    let critic_grads = g.backward(&[(values, vseed)]).params;

    Ok(MinibatchResult {
        actor_loss: a_loss,
        critic_loss: c_loss,
        entropy: ents.iter().sum::<f64>() / nf,
        mean_ratio: ratios.iter().sum::<f64>() / nf,
        clip_fraction: clipped as f64 / nf,
        actor_grads,
        critic_grads,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub epochs: Vec<EpochStats>,
    pub first_minibatch_ratio: f64,
    pub first_minibatch_clip_fraction: f64,
    /// Pre-clipping actor gradient norm of the first minibatch.
    pub first_actor_grad_norm: f64,
    /// Why the update stopped early; parameters are those from before the
    /// failing epoch.
    pub aborted: Option<String>,
}

impl UpdateStats {
    /// Means over completed epochs.
    pub fn summary(&self) -> EpochStats {
        let n = self.epochs.len().max(1) as f64;
        let mut s = EpochStats::default();
        for e in &self.epochs {
            s.actor_loss += e.actor_loss / n;
            s.critic_loss += e.critic_loss / n;
            s.entropy += e.entropy / n;
            s.mean_ratio += e.mean_ratio / n;
            s.clip_fraction += e.clip_fraction / n;
        }
        s
    }
}

/// Runs `epochs × minibatches` Adam steps over shuffled timestep minibatches.
pub fn update<R: Rng + ?Sized>(
    batch: &TrajectoryBatch,
    model: &mut ActorCritic,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let t_len = batch.len();
    if t_len == 0 {
        return Ok(UpdateStats::default());
    }
    if !t_len.is_multiple_of(cfg.minibatches) {
        return Err(Error::Config(format!(
            "batch of {t_len} timesteps is not divisible into {} minibatches",
            cfg.minibatches
        )));
    }
    if batch.returns.len() != batch.rewards.len() || batch.advantages.len() != batch.rewards.len() {
        return Err(Error::Config("batch returns/advantages not populated".into()));
    }
    let mut adv = batch.advantages.clone();
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }
    let adam = Adam::with_lr(cfg.lr);
    let mb_len = t_len / cfg.minibatches;
    let mut order: Vec<usize> = (0..t_len).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs {
        let snapshot = (model.actor_store.clone(), model.critic_store.clone());
        order.shuffle(rng);
        let mut es = EpochStats::default();
        let mut failure = None;
        for m in 0..cfg.minibatches {
            let mut ts = order[m * mb_len..(m + 1) * mb_len].to_vec();
            ts.sort_unstable();
            let mb = Minibatch::from_batch(batch, &ts, &adv)?;
            let res = minibatch_losses(model, &mb, cfg)?;
            if !res.actor_loss.is_finite() || !res.critic_loss.is_finite() {
                failure = Some(format!(
                    "non-finite loss in epoch {epoch} minibatch {m}: actor {} critic {}",
                    res.actor_loss, res.critic_loss
                ));
                break;
            }
            model.actor_store.zero_grads();
            model.actor_store.accumulate(&res.actor_grads);
            model.critic_store.zero_grads();
            model.critic_store.accumulate(&res.critic_grads);
            let a_norm = model.actor_store.clip_grad_norm(cfg.max_grad_norm);
            model.critic_store.clip_grad_norm(cfg.max_grad_norm);
            if epoch == 0 && m == 0 {
                stats.first_minibatch_ratio = res.mean_ratio;
                stats.first_minibatch_clip_fraction = res.clip_fraction;
                stats.first_actor_grad_norm = a_norm;
            }
            if let Err(e) = adam
                .step(&mut model.actor_store)
                .and_then(|_| adam.step(&mut model.critic_store))
            {
                failure = Some(format!("epoch {epoch} minibatch {m}: {e}"));
                break;
            }
            let w = 1.0 / cfg.minibatches as f64;
            es.actor_loss += w * res.actor_loss;
            es.critic_loss += w * res.critic_loss;
            es.entropy += w * res.entropy;
            es.mean_ratio += w * res.mean_ratio;
            es.clip_fraction += w * res.clip_fraction;
        }
        if let Some(f) = failure {
            model.actor_store = snapshot.0;
            model.critic_store = snapshot.1;
            stats.aborted = Some(f);
            break;
        }
        stats.epochs.push(es);
    }
    Ok(stats)
}
