//! Weight-scheduled inter-agent communication: a message encoder, a scalar
//! weight generator, top-k partner selection over softmax-normalised weights,
//! a per-agent message pool, and attention fusion of received messages with
//! the receiver's own observation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Activation, Graph, GroupLayout, Linear, Matrix, Mlp, MlpSpec, NodeId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommConfig {
    /// Message width. `None` picks `min(32, obs_width - 1)`.
    pub message_dim: Option<usize>,
    /// Width of the Q/K/V projections and of the fused feature `z`.
    pub attn_dim: usize,
    pub hidden: usize,
    /// Number of partners each agent reads from.
    pub k: usize,
    /// Take attention values from the received messages. When false the
    /// values come from the receiver's own observation. Set from the model
    /// toggles rather than read from config files.
    #[serde(skip)]
    pub value_from_message: bool,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            message_dim: None,
            attn_dim: 32,
            hidden: 64,
            k: 1,
            value_from_message: true,
        }
    }
}

impl CommConfig {
    pub fn resolve_message_dim(&self, obs_width: usize) -> Result<usize> {
        match self.message_dim {
            Some(0) => Err(Error::Config("comm.message_dim must be positive".into())),
            Some(d) if d >= obs_width => Err(Error::Config(format!(
                "comm.message_dim {d} must be smaller than the observation width {obs_width}"
            ))),
            Some(d) => Ok(d),
            None if obs_width < 2 => Err(Error::Config(
                "observation too narrow to compress into a message".into(),
            )),
            None => Ok(32.min(obs_width - 1)),
        }
    }

    /// Effective partner count for `n_agents`, validated against `1 ≤ k ≤ n−1`.
    pub fn partners(&self, n_agents: usize) -> Result<usize> {
        if n_agents < 2 {
            return Ok(0);
        }
        if self.k == 0 || self.k > n_agents - 1 {
            return Err(Error::Config(format!(
                "comm.k = {} must lie in 1..={} for {n_agents} agents",
                self.k,
                n_agents - 1
            )));
        }
        Ok(self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub payload: Vec<f64>,
    pub source_agent: usize,
    /// `-1` for a slot that was never written.
    pub step_tag: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingWeights {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl SchedulingWeights {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("scheduling weights {raw:?}")));
        }
        let normalized = softmax(&raw)?;
        Ok(Self { raw, normalized })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// The `k` agents other than `self_index` with the largest normalised weight,
/// best first; equal weights go to the lower index.
pub fn schedule(weights: &SchedulingWeights, k: usize, self_index: usize) -> Result<Vec<usize>> {
    let n = weights.len();
    if self_index >= n {
        return Err(Error::Config(format!("self index {self_index} out of range for {n} agents")));
    }
    if k == 0 || k + 1 > n {
        return Err(Error::Config(format!("k = {k} out of range 1..={} ", n.saturating_sub(1))));
    }
    let w = &weights.normalized;
    let mut taken = vec![false; n];
    taken[self_index] = true;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !taken[j] && best.is_none_or(|b| w[j] > w[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("k <= n - 1 leaves a candidate");
        taken[b] = true;
        out.push(b);
    }
    Ok(out)
}

/// Latest message from each agent.
#[derive(Debug, Clone)]
pub struct MessagePool {
    slots: Vec<Option<Message>>,
    message_dim: usize,
}

impl MessagePool {
    pub fn new(n_agents: usize, message_dim: usize) -> Self {
        Self {
            slots: vec![None; n_agents],
            message_dim,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn message_dim(&self) -> usize {
        self.message_dim
    }

    pub fn write(&mut self, msg: Message) -> Result<()> {
        let n = self.slots.len();
        let slot = self
            .slots
            .get_mut(msg.source_agent)
            .ok_or_else(|| Error::Config(format!("agent {} out of range for pool of {n}", msg.source_agent)))?;
        if msg.payload.len() != self.message_dim {
            return Err(Error::shape("message payload", self.message_dim, msg.payload.len()));
        }
        if let Some(prev) = slot {
            if msg.step_tag < prev.step_tag {
                return Err(Error::Config(format!(
                    "agent {} message step tag went backwards ({} after {})",
                    msg.source_agent, msg.step_tag, prev.step_tag
                )));
            }
        }
        *slot = Some(msg);
        Ok(())
    }

    pub fn read(&self, agent: usize) -> Result<Message> {
        let n = self.slots.len();
        let slot = self
            .slots
            .get(agent)
            .ok_or_else(|| Error::Config(format!("agent {agent} out of range for pool of {n}")))?;
        Ok(slot.clone().unwrap_or(Message {
            payload: vec![0.0; self.message_dim],
            source_agent: agent,
            step_tag: -1,
        }))
    }
}

/// Trainable communication parameters, registered under `comm.` in the actor's
/// store so the policy gradient reaches them.
#[derive(Debug, Clone)]
pub struct CommNet {
    pub encoder: Mlp,
    pub weight_gen: Mlp,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub obs_dim: usize,
    pub message_dim: usize,
    pub attn_dim: usize,
    pub value_from_message: bool,
}

impl CommNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        obs_dim: usize,
        cfg: &CommConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d_m = cfg.resolve_message_dim(obs_dim)?;
        if cfg.attn_dim == 0 || cfg.hidden == 0 {
            return Err(Error::Config("comm.attn_dim and comm.hidden must be positive".into()));
        }
        let h = cfg.hidden;
        let encoder = Mlp::new(
            store,
            "comm.encoder",
            MlpSpec::new(vec![obs_dim, h, d_m], Activation::Tanh, Activation::Identity),
            1.0,
            rng,
        )?;
        let weight_gen = Mlp::new(
            store,
            "comm.weight",
            MlpSpec::new(vec![obs_dim, h, h, 1], Activation::Tanh, Activation::Identity),
            1.0,
            rng,
        )?;
        let a = cfg.attn_dim;
        let query = Linear::new(store, "comm.query", obs_dim, a, 1.0, rng);
        let key = Linear::new(store, "comm.key", d_m, a, 1.0, rng);
        let value_in = if cfg.value_from_message { d_m } else { obs_dim };
        let value = Linear::new(store, "comm.value", value_in, a, 1.0, rng);
        Ok(Self {
            encoder,
            weight_gen,
            query,
            key,
            value,
            obs_dim,
            message_dim: d_m,
            attn_dim: a,
            value_from_message: cfg.value_from_message,
        })
    }

    /// `(rows, d_m)` message payloads for `(rows, obs_dim)` observations.
    pub fn messages(&self, g: &mut Graph<'_>, obs: NodeId) -> NodeId {
        self.encoder.forward(g, obs)
    }

    /// `(rows, 1)` raw scheduling weights.
    pub fn weights(&self, g: &mut Graph<'_>, obs: NodeId) -> NodeId {
        self.weight_gen.forward(g, obs)
    }

    /// Fuses each observation row with its `keys` received messages.
    /// `received` holds `rows * keys` payload rows, grouped by receiver.
    /// With no messages the query projection stands in for `z`.
    pub fn fuse(&self, g: &mut Graph<'_>, obs: NodeId, received: Option<NodeId>, keys: usize) -> NodeId {
        let rows = g.value(obs).rows();
        let q = self.query.forward(g, obs);
        let Some(received) = received.filter(|_| keys > 0) else {
            return q;
        };
        assert_eq!(g.value(received).rows(), rows * keys, "received messages per receiver");
        let k = self.key.forward(g, received);
        let v = if self.value_from_message {
            self.value.forward(g, received)
        } else {
            let own = self.value.forward(g, obs);
            g.gather_rows(own, (0..rows).flat_map(|r| std::iter::repeat_n(r, keys)).collect())
        };
        g.grouped_attention(
            q,
            k,
            v,
            GroupLayout {
                groups: rows,
                queries: 1,
                keys,
            },
        )
    }

    fn check_obs(&self, o: &[f64]) -> Result<()> {
        if o.len() != self.obs_dim {
            return Err(Error::shape("comm observation", self.obs_dim, o.len()));
        }
        Ok(())
    }

    pub fn encode_message(&self, store: &ParamStore, o: &[f64], source_agent: usize, step_tag: i64) -> Result<Message> {
        self.check_obs(o)?;
        Ok(Message {
            payload: self.encoder.apply(store, o)?,
            source_agent,
            step_tag,
        })
    }

    pub fn generate_weight(&self, store: &ParamStore, o: &[f64]) -> Result<f64> {
        self.check_obs(o)?;
        Ok(self.weight_gen.apply(store, o)?[0])
    }

    /// Fused feature `z` for one receiver.
    pub fn process_messages(&self, store: &ParamStore, o: &[f64], received: &[Message]) -> Result<Vec<f64>> {
        Ok(self.process_messages_with_probs(store, o, received)?.0)
    }

    /// As [`Self::process_messages`], also returning the attention row.
    pub fn process_messages_with_probs(
        &self,
        store: &ParamStore,
        o: &[f64],
        received: &[Message],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_obs(o)?;
        let mut payloads = Vec::with_capacity(received.len() * self.message_dim);
        for m in received {
            if m.payload.len() != self.message_dim {
                return Err(Error::shape("received payload", self.message_dim, m.payload.len()));
            }
            payloads.extend_from_slice(&m.payload);
        }
        let mut g = Graph::new(store);
        let obs = g.input(Matrix::row_vector(o));
        let rec = (!received.is_empty())
            .then(|| g.input(Matrix::from_vec(received.len(), self.message_dim, payloads).expect("sized above")));
        let z = self.fuse(&mut g, obs, rec, received.len());
        let probs = g
            .attention_probs(z)
            .map(|p| p.row(0).to_vec())
            .unwrap_or_default();
        Ok((g.value(z).row(0).to_vec(), probs))
    }
}

/// Number of trainable layers registered under `prefix` (counted by weight
/// tensors).
pub fn layer_count(store: &ParamStore, prefix: &str) -> usize {
    store
        .iter()
        .filter(|p| p.name.starts_with(prefix) && p.name.ends_with(".weight"))
        .count()
}
