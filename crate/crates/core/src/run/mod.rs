//! Run orchestration behind the command line: config loading, the training
//! loop, greedy evaluation and the ablation grid.

mod ablate;
mod config;
mod evaluate;
mod train;

pub use ablate::{ablate, AblationCell, AblationGrid, AblationReport, AblationRun, CellSummary};
pub use config::{apply_override, RunConfig};
pub use evaluate::{evaluate, evaluate_checkpoint, random_policy, EvalSummary};
pub use train::{train, train_in_memory, MetricsRow, Trainer, TrainOutcome, METRICS_HEADER};
