use rand::Rng;

use super::PolicyDistribution;
use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, Matrix, Mlp, MlpSpec, NodeId, ParamStore};

/// Shared decentralised policy: `[o_i ‖ z_i] → MLP → logits`.
#[derive(Debug, Clone)]
pub struct Actor {
    pub mlp: Mlp,
    pub obs_dim: usize,
    /// Width of the fused communication feature, 0 without communication.
    pub z_dim: usize,
    pub n_actions: usize,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        obs_dim: usize,
        z_dim: usize,
        hidden: usize,
        n_actions: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = MlpSpec::new(
            vec![obs_dim + z_dim, hidden, hidden, n_actions],
            activation,
            Activation::Identity,
        );
        let mlp = Mlp::new(store, "actor", spec, 0.01, rng)?;
        Ok(Self {
            mlp,
            obs_dim,
            z_dim,
            n_actions,
        })
    }

    pub fn logits(&self, g: &mut Graph<'_>, obs: NodeId, z: Option<NodeId>) -> NodeId {
        let x = match z {
            Some(z) => g.concat_cols(&[obs, z]),
            None => obs,
        };
        self.mlp.forward(g, x)
    }

    pub fn actor_forward(
        &self,
        store: &ParamStore,
        o: &[f64],
        z: Option<&[f64]>,
        mask: Option<Vec<bool>>,
    ) -> Result<PolicyDistribution> {
        if o.len() != self.obs_dim {
            return Err(Error::shape("actor observation", self.obs_dim, o.len()));
        }
        let z_len = z.map_or(0, <[f64]>::len);
        if z_len != self.z_dim {
            return Err(Error::shape("actor communication feature", self.z_dim, z_len));
        }
        let mut g = Graph::new(store);
        let on = g.input(Matrix::row_vector(o));
        let zn = z.map(|z| g.input(Matrix::row_vector(z)));
        let l = self.logits(&mut g, on, zn);
        PolicyDistribution::masked(g.value(l).row(0).to_vec(), mask)
    }
}

/// Draws an action and returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(dist: &PolicyDistribution, rng: &mut R) -> (usize, f64) {
    let a = dist.sample_with(rng.random::<f64>());
    (a, dist.log_prob(a))
}

pub fn entropy(dist: &PolicyDistribution) -> f64 {
    dist.entropy()
}
