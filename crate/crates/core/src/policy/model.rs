use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Actor, Critic, CriticKind};
use crate::comm::{CommConfig, CommNet};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, Graph, NodeId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ippo,
    Mappo,
    #[default]
    Mcgoppo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ippo => "ippo",
            Mode::Mappo => "mappo",
            Mode::Mcgoppo => "mcgoppo",
        }
    }
}

/// Component switches. Only honoured in `mcgoppo` mode; the baselines force
/// their own settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub comm: bool,
    pub global_attention: bool,
    pub deep_shallow: bool,
    pub value_from_message: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            comm: true,
            global_attention: true,
            deep_shallow: true,
            value_from_message: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub toggles: Toggles,
    pub hidden: usize,
    pub activation: Activation,
    /// Width of the critic's attention projections.
    pub critic_attn_dim: usize,
    pub comm: CommConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mcgoppo,
            toggles: Toggles::default(),
            hidden: 64,
            activation: Activation::Tanh,
            critic_attn_dim: 32,
            comm: CommConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Toggles after the mode has forced its settings.
    pub fn effective_toggles(&self) -> Toggles {
        match self.mode {
            Mode::Ippo | Mode::Mappo => Toggles {
                comm: false,
                global_attention: false,
                deep_shallow: false,
                value_from_message: self.toggles.value_from_message,
            },
            Mode::Mcgoppo => self.toggles,
        }
    }

    pub fn critic_kind(&self) -> CriticKind {
        match self.mode {
            Mode::Ippo => CriticKind::Local,
            Mode::Mappo => CriticKind::Concat,
            Mode::Mcgoppo => CriticKind::Structured {
                global_attention: self.toggles.global_attention,
                deep_shallow: self.toggles.deep_shallow,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.critic_attn_dim == 0 {
            return Err(Error::Config("model.hidden and model.critic_attn_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Actor, optional communication and critic, with one parameter store for
/// the policy side (actor and comm) and one for the critic.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub config: ModelConfig,
    pub spec: EnvSpec,
    pub actor_store: ParamStore,
    pub critic_store: ParamStore,
    pub actor: Actor,
    pub comm: Option<CommNet>,
    pub critic: Critic,
    /// Partners each agent reads from; 0 without communication.
    pub k: usize,
}

impl ActorCritic {
    pub fn new(spec: &EnvSpec, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toggles = config.effective_toggles();
        let d_obs = spec.obs_width();
        let mut actor_store = ParamStore::new();
        let mut critic_store = ParamStore::new();
        let (comm, k) = if toggles.comm {
            let cfg = CommConfig {
                value_from_message: toggles.value_from_message,
                ..config.comm.clone()
            };
            let k = cfg.partners(spec.n_agents)?;
            (Some(CommNet::new(&mut actor_store, d_obs, &cfg, &mut rng)?), k)
        } else {
            (None, 0)
        };
        let z_dim = comm.as_ref().map_or(0, |c| c.attn_dim);
        let actor = Actor::new(
            &mut actor_store,
            d_obs,
            z_dim,
            config.hidden,
            spec.n_actions(),
            config.activation,
            &mut rng,
        )?;
        let critic = Critic::new(
            &mut critic_store,
            config.critic_kind(),
            d_obs,
            spec.state,
            config.hidden,
            config.critic_attn_dim,
            config.activation,
            &mut rng,
        )?;
        Ok(Self {
            config: config.clone(),
            spec: spec.clone(),
            actor_store,
            critic_store,
            actor,
            comm,
            critic,
            k,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    /// Logits for `(rows, obs_dim)` observations. `received` holds `rows·k`
    /// message payloads grouped by receiver, required when communication is on.
    pub fn policy_logits(&self, g: &mut Graph<'_>, obs: NodeId, received: Option<NodeId>) -> NodeId {
        let z = self.comm.as_ref().map(|c| c.fuse(g, obs, received, self.k));
        self.actor.logits(g, obs, z)
    }

    /// Logits when the senders' observations are rows of the same `obs`
    /// matrix: `partners[r·k + j]` is the row whose message receiver `r` reads.
    pub fn policy_logits_from_partners(&self, g: &mut Graph<'_>, obs: NodeId, partners: &[usize]) -> NodeId {
        let received = self.comm.as_ref().filter(|_| self.k > 0).map(|c| {
            let m = c.messages(g, obs);
            g.gather_rows(m, partners.to_vec())
        });
        self.policy_logits(g, obs, received)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("model", serde_json::to_string(&self.config).expect("model config serialises"));
        ck.set_meta("env_spec", serde_json::to_string(&self.spec).expect("env spec serialises"));
        ck.add_store("actor", &self.actor_store);
        ck.add_store("critic", &self.critic_store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck
            .meta("model")
            .ok_or_else(|| Error::Checkpoint("missing model metadata".into()))?;
        let config: ModelConfig =
            serde_json::from_str(model).map_err(|e| Error::Checkpoint(format!("model metadata: {e}")))?;
        let spec = ck
            .meta("env_spec")
            .ok_or_else(|| Error::Checkpoint("missing env_spec metadata".into()))?;
        let spec: EnvSpec =
            serde_json::from_str(spec).map_err(|e| Error::Checkpoint(format!("env_spec metadata: {e}")))?;
        let mut m = Self::new(&spec, &config, 0)?;
        ck.load_store("actor", &mut m.actor_store)?;
        ck.load_store("critic", &mut m.critic_store)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::layer_count;
    use crate::env::EnvConfig;
    use crate::nn::Matrix;

    fn spec(name: &str) -> EnvSpec {
        EnvConfig::from_name(name).unwrap().spec().unwrap()
    }

    fn mlp_scalars(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    #[test]
    fn ippo_reduces_to_local_actor_and_critic() {
        let s = spec("micro_skirmish");
        let cfg = ModelConfig {
            mode: Mode::Ippo,
            ..Default::default()
        };
        let m = ActorCritic::new(&s, &cfg, 0).unwrap();
        assert!(m.comm.is_none());
        assert_eq!(m.actor_store.num_scalars_with_prefix("comm."), 0);
        assert_eq!(m.actor.mlp.in_dim(), s.obs_width());
        assert_eq!(m.critic.input_width(), s.obs_width());
        assert_eq!(m.critic_store.num_scalars(), mlp_scalars(&[s.obs_width(), 64, 64, 1]));
        assert_eq!(m.actor_store.num_scalars(), mlp_scalars(&[s.obs_width(), 64, 64, s.n_actions()]));
    }

    #[test]
    fn mappo_reduces_to_concatenated_state_critic() {
        let s = spec("micro_skirmish");
        let cfg = ModelConfig {
            mode: Mode::Mappo,
            ..Default::default()
        };
        let m = ActorCritic::new(&s, &cfg, 0).unwrap();
        assert!(m.comm.is_none());
        assert!(m.critic.attention().is_none() && m.critic.deep_shallow_unit().is_none());
        assert_eq!(m.critic.input_width(), s.state_width());
        assert_eq!(m.critic_store.num_scalars(), mlp_scalars(&[s.state_width(), 64, 64, 1]));
    }

    #[test]
    fn mcgoppo_has_every_component_with_declared_depths() {
        let s = spec("micro_skirmish");
        let m = ActorCritic::new(&s, &ModelConfig::default(), 0).unwrap();
        assert_eq!(layer_count(&m.actor_store, "comm.encoder."), 2);
        assert_eq!(layer_count(&m.actor_store, "comm.weight."), 3);
        assert_eq!(layer_count(&m.critic_store, "critic.deep."), 3);
        assert_eq!(layer_count(&m.critic_store, "critic.shallow"), 1);
        assert!(m.critic.attention().is_some());
        assert_eq!(m.actor.mlp.in_dim(), s.obs_width() + 32);
        assert_eq!(m.k, 1);
    }

    #[test]
    fn baselines_ignore_toggles() {
        let s = spec("signal_spread");
        let cfg = ModelConfig {
            mode: Mode::Mappo,
            toggles: Toggles::default(),
            ..Default::default()
        };
        assert!(!cfg.effective_toggles().comm);
        assert!(ActorCritic::new(&s, &cfg, 0).unwrap().comm.is_none());
    }

    #[test]
    fn checkpoint_round_trip_restores_parameters() {
        let s = spec("signal_spread");
        let m = ActorCritic::new(&s, &ModelConfig::default(), 9).unwrap();
        let ck = m.to_checkpoint();
        let back = ActorCritic::from_checkpoint(&Checkpoint::from_text(&ck.to_text()).unwrap()).unwrap();
        for (a, b) in m.actor_store.iter().zip(back.actor_store.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(back.to_checkpoint().to_text(), ck.to_text());
    }

    #[test]
    fn batched_logits_match_single_agent_path() {
        let s = spec("micro_skirmish");
        let m = ActorCritic::new(&s, &ModelConfig::default(), 1).unwrap();
        let mut env = EnvConfig::from_name("micro_skirmish").unwrap().build().unwrap();
        let r = env.reset(3);
        let flat: Vec<f64> = r.observations.iter().flat_map(|o| o.flatten()).collect();
        let obs = Matrix::from_vec(3, s.obs_width(), flat).unwrap();
        let partners = [1, 0, 0];
        let mut g = Graph::new(&m.actor_store);
        let on = g.input(obs);
        let l = m.policy_logits_from_partners(&mut g, on, &partners);
        let comm = m.comm.as_ref().unwrap();
        for i in 0..3 {
            let sender = &r.observations[partners[i]].flatten();
            let msg = comm.encode_message(&m.actor_store, sender, partners[i], 0).unwrap();
            let z = comm
                .process_messages(&m.actor_store, &r.observations[i].flatten(), &[msg])
                .unwrap();
            let d = m
                .actor
                .actor_forward(&m.actor_store, &r.observations[i].flatten(), Some(&z), None)
                .unwrap();
            for (a, b) in d.logits.iter().zip(g.value(l).row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
