//! Experiment orchestration: configs, runs, metrics, reports, plots.

mod config;
mod report;
mod run;

pub use config::{DataSource, ExperimentConfig, Method, Seeds};
pub use report::{build_scatter, emit_results_table, results_csv, ScatterPlot, Series};
pub use run::{
    accuracy_gate, argmax, evaluate, plain_epoch_hook, run_experiment, GateOutcome, MetricsRecord,
    RunResult, CHECKPOINT_FILE, COMPACT_FILE, GATE_POINTS, METRICS_FILE, RESULT_FILE, TIMINGS_FILE,
};
