//! Toy cooperative multi-agent grid worlds with SMAC-style segmented
//! observations and a row-structured global state.

mod skirmish;
mod spread;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use skirmish::{MicroSkirmish, SkirmishConfig, SkirmishWorld};
pub use spread::{SignalSpread, SpreadConfig, SpreadWorld};

use crate::error::{Error, Result};
use crate::policy::{AgentObservation, GlobalState, ObsLayout, StateLayout};

/// Shared discrete action indices for the grid worlds.
pub mod actions {
    pub const NOOP: usize = 0;
    pub const UP: usize = 1;
    pub const DOWN: usize = 2;
    pub const LEFT: usize = 3;
    pub const RIGHT: usize = 4;
    /// MicroSkirmish only.
    pub const ATTACK: usize = 5;

    pub(crate) const MOVES: [(usize, (i64, i64)); 4] =
        [(UP, (0, -1)), (DOWN, (0, 1)), (LEFT, (-1, 0)), (RIGHT, (1, 0))];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub n_agents: usize,
    pub n_enemies: usize,
    pub action_names: Vec<String>,
    pub obs: ObsLayout,
    pub state: StateLayout,
    pub max_steps: usize,
    pub reward_scale: f64,
}

impl EnvSpec {
    pub fn n_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn obs_width(&self) -> usize {
        self.obs.width()
    }

    pub fn state_width(&self) -> usize {
        self.state.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<AgentObservation>,
    pub state: GlobalState,
    /// Team reward replicated per agent.
    pub rewards: Vec<f64>,
    pub done: bool,
    /// Episode ended by the step limit rather than success or failure.
    pub truncated: bool,
    /// Goal reached (SignalSpread) or battle won (MicroSkirmish).
    pub success: bool,
    pub masks: Vec<Vec<bool>>,
}

pub trait MultiAgentEnv: Send {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic initial layout for `seed`.
    fn reset(&mut self, seed: u64) -> StepResult;

    /// Errors on wrong arity, illegal actions, or stepping a finished episode.
    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;
}

/// Environment selection as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    SignalSpread(SpreadConfig),
    MicroSkirmish(SkirmishConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::SignalSpread(SpreadConfig::default())
    }
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::SignalSpread(_) => "signal_spread",
            EnvConfig::MicroSkirmish(_) => "micro_skirmish",
        }
    }

    /// Default parameters for an environment name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "signal_spread" => Ok(EnvConfig::SignalSpread(SpreadConfig::default())),
            "micro_skirmish" => Ok(EnvConfig::MicroSkirmish(SkirmishConfig::default())),
            other => Err(Error::Config(format!(
                "unknown environment {other:?} (expected signal_spread or micro_skirmish)"
            ))),
        }
    }

    pub fn build(&self) -> Result<Box<dyn MultiAgentEnv>> {
        Ok(match self {
            EnvConfig::SignalSpread(c) => Box::new(SignalSpread::new(c.clone())?),
            EnvConfig::MicroSkirmish(c) => Box::new(MicroSkirmish::new(c.clone())?),
        })
    }

    pub fn spec(&self) -> Result<EnvSpec> {
        Ok(self.build()?.spec().clone())
    }
}

pub(crate) fn check_actions(spec: &EnvSpec, masks: &[Vec<bool>], actions: &[usize]) -> Result<()> {
    if actions.len() != spec.n_agents {
        return Err(Error::Env(format!(
            "expected {} actions, got {}",
            spec.n_agents,
            actions.len()
        )));
    }
    for (i, (&a, m)) in actions.iter().zip(masks).enumerate() {
        if a >= spec.n_actions() || !m[a] {
            return Err(Error::Env(format!(
                "illegal action {a} for agent {i} (mask {m:?})"
            )));
        }
    }
    Ok(())
}

/// Maps a grid coordinate in `0..extent` to `[-1, 1]`.
#[inline]
pub(crate) fn norm_coord(v: i64, extent: i64) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * v as f64 / (extent - 1) as f64 - 1.0
    }
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// One row of a debugging trajectory dump.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionRecord {
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    /// Space-separated flattened observation the action was chosen from.
    pub observation: String,
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, records: &[TransitionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
