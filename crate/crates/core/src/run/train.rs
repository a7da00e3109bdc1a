use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{evaluate, EvalSummary, RunConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::policy::ActorCritic;
use crate::ppo::{update, UpdateStats};
use crate::rollout::{EpisodeStats, Rollout};

pub const METRICS_HEADER: &str =
    "step,mean_episode_reward,success_rate,actor_loss,critic_loss,entropy,clip_fraction,wallclock_s";

/// Completed episodes averaged into each metrics row.
const EPISODE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean over the most recent completed episodes; NaN before the first.
    pub mean_episode_reward: f64,
    pub success_rate: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub wallclock_s: f64,
}

/// Collect/update loop state for one run.
pub struct Trainer {
    pub config: RunConfig,
    pub model: ActorCritic,
    rollout: Rollout,
    sample_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    steps: usize,
    recent: VecDeque<EpisodeStats>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(config.seed);
        let spec = config.env.spec()?;
        let model = ActorCritic::new(&spec, &config.model, master.random())?;
        let d_m = model.comm.as_ref().map_or(1, |c| c.message_dim);
        let rollout = Rollout::new(&config.env, config.rollout.n_envs, d_m, master.random())?;
        Ok(Self {
            sample_rng: ChaCha8Rng::seed_from_u64(master.random()),
            update_rng: ChaCha8Rng::seed_from_u64(master.random()),
            config,
            model,
            rollout,
            steps: 0,
            recent: VecDeque::with_capacity(EPISODE_WINDOW),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn finished(&self) -> bool {
        self.steps >= self.config.total_steps
    }

    /// One collection followed by one update. When the update aborts the
    /// row is still returned and the parameters are those before the
    /// failing epoch.
    pub fn iteration(&mut self) -> Result<(MetricsRow, UpdateStats)> {
        let c = &self.config;
        let batch = self.rollout.collect(&self.model, &c.rollout, &c.train, &mut self.sample_rng)?;
        self.steps += batch.len();
        for ep in self.rollout.drain_episodes() {
            if self.recent.len() == EPISODE_WINDOW {
                self.recent.pop_front();
            }
            self.recent.push_back(ep);
        }
        let stats = update(&batch, &mut self.model, &c.train, &mut self.update_rng)?;
        let s = stats.summary();
        let n = self.recent.len() as f64;
        let (reward, success) = if self.recent.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                self.recent.iter().map(|e| e.reward).sum::<f64>() / n,
                self.recent.iter().filter(|e| e.success).count() as f64 / n,
            )
        };
        let row = MetricsRow {
            step: self.steps,
            mean_episode_reward: reward,
            success_rate: success,
            actor_loss: s.actor_loss,
            critic_loss: s.critic_loss,
            entropy: s.entropy,
            clip_fraction: s.clip_fraction,
            wallclock_s: 0.0,
        };
        Ok((row, stats))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        checkpoint_with_env(&self.model, &self.config.env)
    }
}

pub(crate) fn checkpoint_with_env(model: &ActorCritic, env: &EnvConfig) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.set_meta("env", serde_json::to_string(env).expect("env config serialises"));
    ck
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub model: ActorCritic,
    /// Greedy evaluation of the final parameters, when `eval_episodes > 0`.
    pub eval: Option<EvalSummary>,
}

/// Trains without touching the filesystem.
pub fn train_in_memory(config: &RunConfig) -> Result<TrainOutcome> {
    run(config, None)
}

/// Trains and writes `config.toml`, `metrics.csv`, checkpoints and, on a
/// non-finite training state, `diagnostics.txt` under `output_dir`.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    run(config, Some(config.output_dir.as_path()))
}

struct Artifacts<'a> {
    dir: &'a Path,
    metrics: csv::Writer<std::fs::File>,
}

impl<'a> Artifacts<'a> {
    fn create(dir: &'a Path, config: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        std::fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let mpath = dir.join("metrics.csv");
        let file = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let mut metrics = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        metrics.write_record(METRICS_HEADER.split(','))?;
        metrics.flush().map_err(|e| Error::io(&mpath, e))?;
        Ok(Self { dir, metrics })
    }

    fn row(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.serialize(row)?;
        self.metrics.flush().map_err(|e| Error::io(self.dir.join("metrics.csv"), e))
    }

    fn checkpoint(&self, trainer: &Trainer, name: &str) -> Result<()> {
        trainer.checkpoint().save(self.dir.join("checkpoints").join(name))
    }

    fn diagnostics(&self, trainer: &Trainer, reason: &str, last: Option<&MetricsRow>) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "reason: {reason}");
        let _ = writeln!(text, "step: {}", trainer.steps());
        if let Some(r) = last {
            let _ = writeln!(text, "last metrics: {r:?}");
        }
        for (name, store) in [("actor", &trainer.model.actor_store), ("critic", &trainer.model.critic_store)] {
            let bad = store.iter().filter(|t| !t.value.is_finite()).count();
            let _ = writeln!(
                text,
                "{name}: {} tensors, {bad} non-finite, adam steps {}",
                store.len(),
                store.adam_step_count()
            );
        }
        let path = self.dir.join("diagnostics.txt");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn run(config: &RunConfig, dir: Option<&Path>) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone())?;
    let mut out = match dir {
        Some(d) => Some(Artifacts::create(d, config)?),
        None => None,
    };
    if let Some(a) = &out {
        a.checkpoint(&trainer, "step_0.ckpt")?;
    }
    let mut metrics = Vec::new();
    let mut next_ckpt = config.checkpoint_every;
    while !trainer.finished() {
        let (mut row, stats) = match trainer.iteration() {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                if let Some(a) = &out {
                    a.diagnostics(&trainer, &e.to_string(), metrics.last())?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if config.log_wallclock {
            row.wallclock_s = start.elapsed().as_secs_f64();
        }
        if let Some(a) = &mut out {
            a.row(&row)?;
        }
        metrics.push(row);
        if let Some(reason) = stats.aborted {
            if let Some(a) = &out {
                a.diagnostics(&trainer, &reason, metrics.last())?;
            }
            return Err(Error::NonFinite(format!("training aborted at step {}: {reason}", trainer.steps())));
        }
        if config.checkpoint_every > 0 && trainer.steps() >= next_ckpt && !trainer.finished() {
            if let Some(a) = &out {
                a.checkpoint(&trainer, &format!("step_{}.ckpt", trainer.steps()))?;
            }
            while next_ckpt <= trainer.steps() {
                next_ckpt += config.checkpoint_every;
            }
        }
    }
    if let Some(a) = &out {
        a.checkpoint(&trainer, "final.ckpt")?;
    }
    let eval = if config.eval_episodes > 0 && config.total_steps > 0 {
        Some(evaluate(&trainer.model, &config.env, config.eval_episodes, config.seed)?)
    } else {
        None
    };
    Ok(TrainOutcome {
        metrics,
        model: trainer.model,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RolloutConfig;

    fn tiny(total_steps: usize) -> RunConfig {
        RunConfig {
            total_steps,
            eval_episodes: 0,
            rollout: RolloutConfig {
                steps_per_update: 8,
                n_envs: 2,
                bootstrap: true,
            },
            ..Default::default()
        }
    }

    #[test]
    fn steps_strictly_increase_and_first_ratio_is_one() {
        let mut t = Trainer::new(tiny(64)).unwrap();
        let mut last = 0;
        while !t.finished() {
            let (row, stats) = t.iteration().unwrap();
            assert!(row.step > last);
            last = row.step;
            assert!((stats.first_minibatch_ratio - 1.0).abs() < 1e-9);
            assert_eq!(stats.first_minibatch_clip_fraction, 0.0);
        }
        assert_eq!(last, 64);
    }

    #[test]
    fn zero_steps_writes_header_and_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..tiny(0)
        };
        let out = train(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text, format!("{METRICS_HEADER}\n"));
        assert!(dir.path().join("checkpoints/step_0.ckpt").exists());
        let frozen = RunConfig::load(dir.path().join("config.toml"), &[]).unwrap();
        assert_eq!(frozen, cfg);
    }
}
