//! Workloads, metrics and the experiment runner.

pub mod metrics;
pub mod runner;
pub mod workload;

pub use metrics::{extract, DecisionPath, MetricsReport, PhaseName, Summary};
pub use runner::{run_experiment, sweep, sweep_table, ExperimentResult, Overrides, SweepParam, SweepRow};
pub use workload::{CommandGenerator, Mode, WorkloadConfig};
