pub mod comm;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod run;

pub use error::{Error, Result};
