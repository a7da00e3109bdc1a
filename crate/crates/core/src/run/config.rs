use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::ModelConfig;
use crate::ppo::TrainConfig;
use crate::rollout::RolloutConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Environment steps summed over all copies.
    pub total_steps: usize,
    pub output_dir: PathBuf,
    /// Environment steps between checkpoints; 0 keeps only the initial and final ones.
    pub checkpoint_every: usize,
    /// Record elapsed seconds in `metrics.csv`. Off by default so that the
    /// file is byte-identical across repeated runs.
    pub log_wallclock: bool,
    /// Greedy episodes evaluated after training.
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rollout: RolloutConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 200_000,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            log_wallclock: false,
            eval_episodes: 100,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            rollout: RolloutConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides in order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.rollout.validate()?;
        let spec = self.env.spec()?;
        if self.model.effective_toggles().comm {
            self.model.comm.partners(spec.n_agents)?;
            self.model.comm.resolve_message_dim(spec.obs_width())?;
        }
        if !self.rollout.batch_size().is_multiple_of(self.train.minibatches) {
            return Err(Error::Config(format!(
                "rollout batch of {} timesteps is not divisible into {} minibatches",
                self.rollout.batch_size(),
                self.train.minibatches
            )));
        }
        Ok(())
    }

    /// The resolved config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}

/// Sets a dotted `key=value` into a TOML table. The value is read as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    if key.is_empty() {
        return Err(Error::Config(format!("override {assignment:?} has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
