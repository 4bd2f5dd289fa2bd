//! Experiment orchestration: runs, metric files, summaries, plot tables and self-checks.

pub mod checks;
pub mod experiment;
pub mod metrics;
pub mod plots;
pub mod summary;

pub use experiment::{run_algorithm, run_experiment, run_sweeps, RunMeta, RunRequest, SweepAxis};
pub use metrics::{MetricsRecord, MetricsWriter};
pub use plots::{emit_plots, PlotReport};
pub use summary::{summarize, RunSummary};
