//! Actor and critic networks plus the observation and state containers they
//! consume.

mod actor;
mod critic;
mod model;
mod types;

pub use actor::{entropy, sample_action, Actor};
pub use critic::{AttentionUnit, Critic, CriticInput, CriticKind, DeepShallow};
pub use model::{ActorCritic, Mode, ModelConfig, Toggles};
pub use types::*;
