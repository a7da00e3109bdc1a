use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::matrix::Matrix;
use super::params::{orthogonal, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

/// Dense layer `y = x·Wᵀ + b`; `W` is `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = if in_dim == 0 {
            Matrix::zeros(out_dim, 0)
        } else {
            orthogonal(out_dim, in_dim, gain, rng)
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        g.linear(x, self.weight, self.bias)
    }

    /// Single-vector forward without recording a tape.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let b = store.value(self.bias);
        super::functional::linear_forward(x, store.value(self.weight), b.row(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, final_activation: Activation) -> Self {
        Self {
            layer_sizes,
            activation,
            final_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes[1..].contains(&0) {
            return Err(Error::Config(format!(
                "MLP layer widths must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Hidden layers use gain 1.0; the last layer uses `final_gain`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        spec: MlpSpec,
        final_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_layers();
        let layers = spec
            .layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 1 == n { final_gain } else { 1.0 };
                Linear::new(store, &format!("{name}.{i}"), w[0], w[1], gain, rng)
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn in_dim(&self) -> usize {
        self.spec.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.spec.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().unwrap()
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            let act = if i + 1 == n {
                self.spec.final_activation
            } else {
                self.spec.activation
            };
            h = act.apply(g, h);
        }
        h
    }

    /// Input-checked single-vector forward.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("mlp input", self.in_dim(), x.len()));
        }
        let mut g = Graph::new(store);
        let xn = g.input(Matrix::row_vector(x));
        let y = self.forward(&mut g, xn);
        Ok(g.value(y).row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_requires_two_sizes() {
        let s = MlpSpec::new(vec![3], Activation::Tanh, Activation::Identity);
        assert!(s.validate().is_err());
        let s = MlpSpec::new(vec![3, 0, 2], Activation::Tanh, Activation::Identity);
        assert!(s.validate().is_err());
    }

    #[test]
    fn mlp_registers_named_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![4, 8, 8, 2], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::new(&mut store, "net", spec, 0.01, &mut rng).unwrap();
        assert_eq!(mlp.num_layers(), 3);
        assert!(store.find("net.2.weight").is_some());
        assert_eq!(store.num_scalars(), 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
        assert!(mlp.apply(&store, &[0.0; 3]).is_err());
        assert_eq!(mlp.apply(&store, &[0.1; 4]).unwrap().len(), 2);
    }
}
