use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{train, train_in_memory, RunConfig};
use crate::error::{Error, Result};
use crate::policy::{Mode, Toggles};

/// One configuration to compare. Toggle keys not listed keep their default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub toggles: Toggles,
}

impl AblationCell {
    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let mut label = self.mode.name().to_string();
        if self.mode == Mode::Mcgoppo {
            let t = self.toggles;
            for (on, name) in [
                (t.comm, "comm"),
                (t.global_attention, "global_attention"),
                (t.deep_shallow, "deep_shallow"),
                (t.value_from_message, "value_from_message"),
            ] {
                if !on {
                    label.push_str("-no_");
                    label.push_str(name);
                }
            }
        }
        label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub seeds: Vec<u64>,
    /// Shorthand for cells with default toggles.
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub cells: Vec<AblationCell>,
    /// Overrides the base config's `total_steps`.
    pub total_steps: Option<usize>,
    /// Overrides the base config's `eval_episodes`.
    pub eval_episodes: Option<usize>,
}

impl AblationGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Config(format!("grid: {e}")))?;
        if g.seeds.is_empty() {
            return Err(Error::Config("grid: seeds must not be empty".into()));
        }
        if g.modes.is_empty() && g.cells.is_empty() {
            return Err(Error::Config("grid: needs at least one of modes or cells".into()));
        }
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Cells in grid order with duplicates (same mode and effective toggles)
    /// removed, plus a warning for each one dropped.
    pub fn expand(&self) -> (Vec<AblationCell>, Vec<String>) {
        let all = self
            .modes
            .iter()
            .map(|&mode| AblationCell {
                name: None,
                mode,
                toggles: Toggles::default(),
            })
            .chain(self.cells.iter().cloned());
        let mut seen = HashSet::new();
        let mut labels = HashSet::new();
        let (mut cells, mut warnings) = (Vec::new(), Vec::new());
        for c in all {
            let effective = crate::policy::ModelConfig {
                mode: c.mode,
                toggles: c.toggles,
                ..Default::default()
            }
            .effective_toggles();
            if !seen.insert((c.mode, effective)) || !labels.insert(c.label()) {
                warnings.push(format!("grid: dropping duplicate cell {}", c.label()));
                continue;
            }
            cells.push(c);
        }
        (cells, warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub label: String,
    pub mode: String,
    pub seed: u64,
    pub status: String,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub final_train_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub label: String,
    pub mode: String,
    pub comm: bool,
    pub global_attention: bool,
    pub deep_shallow: bool,
    pub value_from_message: bool,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<CellSummary>,
    pub warnings: Vec<String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains every cell for every seed and evaluates the final parameters
/// greedily. With `write_files`, each run gets its own directory under the
/// base `output_dir`, and `runs.csv` (one row per run) and `summary.csv`
/// (mean and standard deviation over successful seeds) are written there. A
/// failing run is recorded and the grid continues.
pub fn ablate(base: &RunConfig, grid: &AblationGrid, write_files: bool) -> Result<AblationReport> {
    base.validate()?;
    let (cells, warnings) = grid.expand();
    let mut configs = Vec::new();
    for cell in &cells {
        for &seed in &grid.seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.model.mode = cell.mode;
            cfg.model.toggles = cell.toggles;
            cfg.total_steps = grid.total_steps.unwrap_or(base.total_steps);
            cfg.eval_episodes = grid.eval_episodes.unwrap_or(base.eval_episodes).max(1);
            cfg.output_dir = base.output_dir.join(cell.label()).join(format!("seed_{seed}"));
            cfg.validate()?;
            configs.push((cell, cfg));
        }
    }
    let mut runs = Vec::with_capacity(configs.len());
    for (cell, cfg) in &configs {
        let result = if write_files { train(cfg) } else { train_in_memory(cfg) };
        let run = match result {
            Ok(out) => {
                let eval = out.eval.expect("eval_episodes is positive");
                AblationRun {
                    label: cell.label(),
                    mode: cell.mode.name().into(),
                    seed: cfg.seed,
                    status: "ok".into(),
                    success_rate: eval.success_rate,
                    mean_reward: eval.mean_reward,
                    final_train_reward: out.metrics.last().map_or(f64::NAN, |r| r.mean_episode_reward),
                }
            }
            Err(e) => AblationRun {
                label: cell.label(),
                mode: cell.mode.name().into(),
                seed: cfg.seed,
                status: format!("failed: {e}"),
                success_rate: f64::NAN,
                mean_reward: f64::NAN,
                final_train_reward: f64::NAN,
            },
        };
        runs.push(run);
    }
    let summary = cells
        .iter()
        .map(|cell| {
            let label = cell.label();
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.label == label).collect();
            let ok: Vec<&&AblationRun> = mine.iter().filter(|r| r.status == "ok").collect();
            let (sm, ss) = mean_std(&ok.iter().map(|r| r.success_rate).collect::<Vec<_>>());
            let (rm, rs) = mean_std(&ok.iter().map(|r| r.mean_reward).collect::<Vec<_>>());
            let t = crate::policy::ModelConfig {
                mode: cell.mode,
                toggles: cell.toggles,
                ..Default::default()
            }
            .effective_toggles();
            CellSummary {
                label,
                mode: cell.mode.name().into(),
                comm: t.comm,
                global_attention: t.global_attention,
                deep_shallow: t.deep_shallow,
                value_from_message: t.value_from_message,
                seeds_ok: ok.len(),
                seeds_failed: mine.len() - ok.len(),
                success_mean: sm,
                success_std: ss,
                reward_mean: rm,
                reward_std: rs,
            }
        })
        .collect();
    let report = AblationReport {
        runs,
        summary,
        warnings,
    };
    if write_files {
        let dir: PathBuf = base.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_csv(&dir.join("runs.csv"), &report.runs)?;
        write_csv(&dir.join("summary.csv"), &report.summary)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::RolloutConfig;

    #[test]
    fn unknown_toggle_is_rejected_at_parse_time() {
        let text = "seeds = [0]\n[[cells]]\nmode = \"mcgoppo\"\ntoggles = { comm = false, telepathy = true }";
        assert!(AblationGrid::from_toml_str(text).is_err());
        assert!(AblationGrid::from_toml_str("seeds = [0]\nmodes = [\"qmix\"]").is_err());
        assert!(AblationGrid::from_toml_str("seeds = []\nmodes = [\"ippo\"]").is_err());
    }

    #[test]
    fn duplicates_are_dropped_with_warning() {
        let text = r#"
            seeds = [0]
            modes = ["ippo", "mcgoppo"]
            [[cells]]
            mode = "ippo"
            toggles = { comm = true }
            [[cells]]
            toggles = { comm = false }
        "#;
        let (cells, warnings) = AblationGrid::from_toml_str(text).unwrap().expand();
        let labels: Vec<String> = cells.iter().map(AblationCell::label).collect();
        assert_eq!(labels, ["ippo", "mcgoppo", "mcgoppo-no_comm"]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn three_modes_three_seeds_gives_nine_runs() {
        let base = RunConfig {
            total_steps: 16,
            rollout: RolloutConfig {
                steps_per_update: 8,
                n_envs: 2,
                bootstrap: true,
            },
            ..Default::default()
        };
        let grid = AblationGrid::from_toml_str(
            "seeds = [0, 1, 2]\nmodes = [\"ippo\", \"mappo\", \"mcgoppo\"]\neval_episodes = 2",
        )
        .unwrap();
        let r = ablate(&base, &grid, false).unwrap();
        assert_eq!(r.runs.len(), 9);
        assert!(r.runs.iter().all(|x| x.status == "ok"));
        assert_eq!(r.summary.len(), 3);
        assert!(r.summary.iter().all(|s| s.seeds_ok == 3));
    }
}
