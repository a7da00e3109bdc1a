//! Minimal differentiable numeric core: matrices, a reverse-mode tape, dense
//! layers, attention, Adam and a finite-difference gradient checker. All
//! arithmetic is `f64`.

mod checkpoint;
mod functional;
mod gradcheck;
mod graph;
mod layers;
mod matrix;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use functional::{attention, attention_weights, linear_forward, softmax, GroupLayout};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradCheckReport};
pub use graph::{Backward, Graph, NodeId};
pub use layers::{Activation, Linear, Mlp, MlpSpec};
pub use matrix::Matrix;
pub use optim::Adam;
pub use params::{orthogonal, ParamGrads, ParamId, ParamStore, ParamTensor};
