use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentObservation, GlobalState, StateLayout};
use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, GroupLayout, Linear, Matrix, Mlp, MlpSpec, NodeId, ParamStore};

/// Critic inputs for `T` timesteps of `n` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticInput {
    /// `(T·n, obs_dim)`, agent-major within each timestep.
    pub obs: Matrix,
    /// `(T, state_width)` flattened global states.
    pub states: Matrix,
    pub layout: StateLayout,
}

impl CriticInput {
    pub fn new(obs: Matrix, states: Matrix, layout: StateLayout) -> Result<Self> {
        if states.cols() != layout.width() {
            return Err(Error::shape("critic states", layout.width(), states.cols()));
        }
        if obs.rows() != states.rows() * layout.n_agents {
            return Err(Error::shape(
                "critic observations",
                format!("{} rows", states.rows() * layout.n_agents),
                obs.rows(),
            ));
        }
        Ok(Self { obs, states, layout })
    }

    /// A single timestep.
    pub fn from_step(state: &GlobalState, obs: &[AgentObservation]) -> Result<Self> {
        let layout = state.layout();
        if obs.len() != layout.n_agents {
            return Err(Error::shape("joint observation", layout.n_agents, obs.len()));
        }
        let width = obs.first().map_or(0, AgentObservation::width);
        let mut flat = Vec::with_capacity(obs.len() * width);
        for o in obs {
            if o.width() != width {
                return Err(Error::shape("joint observation width", width, o.width()));
            }
            o.write_into(&mut flat);
        }
        Self::new(
            Matrix::from_vec(obs.len(), width, flat)?,
            Matrix::row_vector(&state.flatten()),
            layout,
        )
    }

    pub fn timesteps(&self) -> usize {
        self.states.rows()
    }

    fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        let mut m = Matrix::zeros(self.states.rows(), range.len());
        for t in 0..self.states.rows() {
            m.row_mut(t).copy_from_slice(&self.states.row(t)[range.clone()]);
        }
        m
    }

    /// `(T·n, agent_width)` per-agent state rows.
    pub fn agent_rows(&self) -> Matrix {
        let l = self.layout;
        let m = self.columns(l.agent_range());
        Matrix::from_vec(self.timesteps() * l.n_agents, l.agent_width, m.into_vec()).expect("agent block")
    }

    /// `(T, enemy_segment_width)`
    pub fn enemy_segment(&self) -> Matrix {
        self.columns(self.layout.enemy_range())
    }

    /// `(T, env_width)`
    pub fn env_features(&self) -> Matrix {
        self.columns(self.layout.env_range())
    }

    /// Row index of the owning timestep for each of the `T·n` agent rows.
    pub fn broadcast_index(&self) -> Vec<usize> {
        let n = self.layout.n_agents;
        (0..self.timesteps() * n).map(|r| r / n).collect()
    }
}

/// Which critic architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// Value from the agent's own observation (IPPO).
    Local,
    /// Value from the concatenated global state (MAPPO).
    Concat,
    /// Attention unit over per-agent state rows followed by deep/shallow
    /// feature processing.
    Structured {
        global_attention: bool,
        deep_shallow: bool,
    },
}

/// Queries from each agent's observation attend over the per-agent rows of
/// the global state of the same timestep.
#[derive(Debug, Clone)]
pub struct AttentionUnit {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl AttentionUnit {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        obs_dim: usize,
        row_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: Linear::new(store, "critic.attn.query", obs_dim, attn_dim, 1.0, rng),
            key: Linear::new(store, "critic.attn.key", row_dim, attn_dim, 1.0, rng),
            value: Linear::new(store, "critic.attn.value", row_dim, attn_dim, 1.0, rng),
        }
    }

    /// `(T·n, attn_dim)` condensed features.
    pub fn forward(&self, g: &mut Graph<'_>, obs: NodeId, rows: NodeId, n_agents: usize) -> NodeId {
        let t = g.value(obs).rows() / n_agents;
        let q = self.query.forward(g, obs);
        let k = self.key.forward(g, rows);
        let v = self.value.forward(g, rows);
        g.grouped_attention(
            q,
            k,
            v,
            GroupLayout {
                groups: t,
                queries: n_agents,
                keys: n_agents,
            },
        )
    }
}

/// Enemy features through three layers, everything else through one, then
/// spliced. The deep path is absent when the enemy segment is empty.
#[derive(Debug, Clone)]
pub struct DeepShallow {
    pub deep: Option<Mlp>,
    pub shallow: Linear,
    pub feature_dim: usize,
    pub enemy_dim: usize,
    pub rest_dim: usize,
}

impl DeepShallow {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        enemy_dim: usize,
        rest_dim: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let deep = if enemy_dim > 0 {
            Some(Mlp::new(
                store,
                "critic.deep",
                MlpSpec::new(vec![enemy_dim, hidden, hidden, hidden], activation, activation),
                1.0,
                rng,
            )?)
        } else {
            None
        };
        let shallow = Linear::new(store, "critic.shallow", feature_dim + rest_dim, hidden, 1.0, rng);
        Ok(Self {
            deep,
            shallow,
            feature_dim,
            enemy_dim,
            rest_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.shallow.out_dim + self.deep.as_ref().map_or(0, Mlp::out_dim)
    }

    /// `features` and `rest` have one row per output row; `enemy` has one
    /// row per timestep and is broadcast with `index`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        features: NodeId,
        enemy: NodeId,
        rest: NodeId,
        index: &[usize],
        activation: Activation,
    ) -> NodeId {
        let joined = g.concat_cols(&[features, rest]);
        let pre = self.shallow.forward(g, joined);
        let shallow = activation.apply(g, pre);
        match &self.deep {
            Some(deep) => {
                let d = deep.forward(g, enemy);
                let d = g.gather_rows(d, index.to_vec());
                g.concat_cols(&[d, shallow])
            }
            None => shallow,
        }
    }
}

#[derive(Debug, Clone)]
enum Processing {
    DeepShallow(DeepShallow),
    Trunk(Mlp),
}

#[derive(Debug, Clone)]
enum Body {
    Local(Mlp),
    Concat(Mlp),
    Structured {
        attention: Option<AttentionUnit>,
        processing: Processing,
        head: Mlp,
    },
}

/// Centralised value function emitting one value per agent.
#[derive(Debug, Clone)]
pub struct Critic {
    pub kind: CriticKind,
    pub obs_dim: usize,
    pub layout: StateLayout,
    activation: Activation,
    body: Body,
}

impl Critic {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: CriticKind,
        obs_dim: usize,
        layout: StateLayout,
        hidden: usize,
        attn_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = |store: &mut ParamStore, name: &str, sizes: Vec<usize>, rng: &mut R| {
            Mlp::new(store, name, MlpSpec::new(sizes, activation, Activation::Identity), 1.0, rng)
        };
        let body = match kind {
            CriticKind::Local => Body::Local(mlp(store, "critic.mlp", vec![obs_dim, hidden, hidden, 1], rng)?),
            CriticKind::Concat => Body::Concat(mlp(store, "critic.mlp", vec![layout.width(), hidden, hidden, 1], rng)?),
            CriticKind::Structured {
                global_attention,
                deep_shallow,
            } => {
                let (attention, feature_dim) = if global_attention {
                    let a = AttentionUnit::new(store, obs_dim, layout.agent_width, attn_dim, rng);
                    (Some(a), attn_dim)
                } else {
                    (None, layout.agent_segment_width())
                };
                let enemy = layout.enemy_segment_width();
                let processing = if deep_shallow {
                    Processing::DeepShallow(DeepShallow::new(
                        store,
                        feature_dim,
                        enemy,
                        layout.env_width,
                        hidden,
                        activation,
                        rng,
                    )?)
                } else {
                    let spec = MlpSpec::new(
                        vec![feature_dim + enemy + layout.env_width, hidden, hidden],
                        activation,
                        activation,
                    );
                    Processing::Trunk(Mlp::new(store, "critic.trunk", spec, 1.0, rng)?)
                };
                let fused = match &processing {
                    Processing::DeepShallow(ds) => ds.out_dim(),
                    Processing::Trunk(m) => m.out_dim(),
                };
                let head = mlp(store, "critic.head", vec![fused, hidden, 1], rng)?;
                Body::Structured {
                    attention,
                    processing,
                    head,
                }
            }
        };
        Ok(Self {
            kind,
            obs_dim,
            layout,
            activation,
            body,
        })
    }

    /// Input width seen by the first trainable layer.
    pub fn input_width(&self) -> usize {
        match &self.body {
            Body::Local(m) | Body::Concat(m) => m.in_dim(),
            Body::Structured { .. } => self.obs_dim + self.layout.width(),
        }
    }

    pub fn attention(&self) -> Option<&AttentionUnit> {
        match &self.body {
            Body::Structured { attention, .. } => attention.as_ref(),
            _ => None,
        }
    }

    pub fn deep_shallow_unit(&self) -> Option<&DeepShallow> {
        match &self.body {
            Body::Structured {
                processing: Processing::DeepShallow(ds),
                ..
            } => Some(ds),
            _ => None,
        }
    }

    /// Final layer of the value head.
    pub fn head_output(&self) -> &Linear {
        match &self.body {
            Body::Local(m) | Body::Concat(m) => m.last(),
            Body::Structured { head, .. } => head.last(),
        }
    }

    /// `(T·n, 1)` values.
    pub fn values(&self, g: &mut Graph<'_>, input: &CriticInput) -> NodeId {
        let n = self.layout.n_agents;
        assert_eq!(input.layout, self.layout, "critic: state layout");
        assert_eq!(input.obs.cols(), self.obs_dim, "critic: observation width");
        let index = input.broadcast_index();
        match &self.body {
            Body::Local(m) => {
                let x = g.input(input.obs.clone());
                m.forward(g, x)
            }
            Body::Concat(m) => {
                let s = g.input(input.states.clone());
                let v = m.forward(g, s);
                g.gather_rows(v, index)
            }
            Body::Structured {
                attention,
                processing,
                head,
            } => {
                let features = match attention {
                    Some(a) => {
                        let obs = g.input(input.obs.clone());
                        let rows = g.input(input.agent_rows());
                        a.forward(g, obs, rows, n)
                    }
                    None => {
                        let flat = g.input(input.columns(self.layout.agent_range()));
                        g.gather_rows(flat, index.clone())
                    }
                };
                let env = g.input(input.env_features());
                let rest = g.gather_rows(env, index.clone());
                let enemy = g.input(input.enemy_segment());
                let fused = match processing {
                    Processing::DeepShallow(ds) => ds.forward(g, features, enemy, rest, &index, self.activation),
                    Processing::Trunk(trunk) => {
                        let e = g.gather_rows(enemy, index);
                        let x = g.concat_cols(&[features, e, rest]);
                        trunk.forward(g, x)
                    }
                };
                head.forward(g, fused)
            }
        }
    }

    /// One value per agent for a single timestep.
    pub fn critic_forward(&self, store: &ParamStore, s: &GlobalState, joint_obs: &[AgentObservation]) -> Result<Vec<f64>> {
        let input = self.checked_input(s, joint_obs)?;
        let mut g = Graph::new(store);
        let v = self.values(&mut g, &input);
        Ok(g.value(v).data().to_vec())
    }

    fn checked_input(&self, s: &GlobalState, joint_obs: &[AgentObservation]) -> Result<CriticInput> {
        if s.layout() != self.layout {
            return Err(Error::shape("global state", format!("{:?}", self.layout), format!("{:?}", s.layout())));
        }
        let input = CriticInput::from_step(s, joint_obs)?;
        if input.obs.cols() != self.obs_dim {
            return Err(Error::shape("critic observation", self.obs_dim, input.obs.cols()));
        }
        Ok(input)
    }

    /// Per-agent condensed features `(n, attn_dim)` from the attention unit.
    pub fn critic_attention_unit(&self, store: &ParamStore, s: &GlobalState, joint_obs: &[AgentObservation]) -> Result<Matrix> {
        let a = self
            .attention()
            .ok_or_else(|| Error::Config("critic has no attention unit".into()))?;
        let input = self.checked_input(s, joint_obs)?;
        let mut g = Graph::new(store);
        let obs = g.input(input.obs.clone());
        let rows = g.input(input.agent_rows());
        let c = a.forward(&mut g, obs, rows, self.layout.n_agents);
        Ok(g.value(c).clone())
    }

    /// Deep/shallow processing of one condensed feature row.
    pub fn deep_shallow(&self, store: &ParamStore, features: &[f64], enemy_segment: &[f64], rest_segment: &[f64]) -> Result<Vec<f64>> {
        let ds = self
            .deep_shallow_unit()
            .ok_or_else(|| Error::Config("critic has no deep/shallow unit".into()))?;
        if features.len() != ds.feature_dim {
            return Err(Error::shape("deep_shallow features", ds.feature_dim, features.len()));
        }
        if enemy_segment.len() != ds.enemy_dim {
            return Err(Error::shape("deep_shallow enemy segment", ds.enemy_dim, enemy_segment.len()));
        }
        if rest_segment.len() != ds.rest_dim {
            return Err(Error::shape("deep_shallow rest segment", ds.rest_dim, rest_segment.len()));
        }
        let mut g = Graph::new(store);
        let f = g.input(Matrix::row_vector(features));
        let e = g.input(Matrix::from_vec(1, enemy_segment.len(), enemy_segment.to_vec())?);
        let r = g.input(Matrix::row_vector(rest_segment));
        let out = ds.forward(&mut g, f, e, r, &[0], self.activation);
        Ok(g.value(out).row(0).to_vec())
    }
}
