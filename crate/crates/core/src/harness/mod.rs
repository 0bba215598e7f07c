//! Training loop, evaluation, checkpoints and plot-data emission behind the CLI.

mod agent;
mod checkpoint;
mod config;
mod eval;
mod metrics;
mod plotdata;
mod train;

pub use agent::Policy;
pub use checkpoint::{load_checkpoint, save_checkpoint, Block, Manifest};
pub use config::{Algo, EnvName, TrainConfig};
pub use eval::{evaluate_policy, quantile, EvalSummary};
pub use metrics::{header, read_metrics, EpochMetrics, COLUMNS};
pub use plotdata::{convergence_window, emit_plotdata, window_summary, PlotFiles, WindowSummary};
pub use train::{run_training, Trainer};
