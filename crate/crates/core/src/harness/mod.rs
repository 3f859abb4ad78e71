//! Experiment configuration, execution, output and comparison.

pub mod compare;
pub mod config;
pub mod output;
pub mod runner;

pub use compare::{
    compare_series, convergence_time, max_overshoot, ComparisonReport, ConvergenceOptions,
};
pub use config::{Engine, ExperimentConfig};
pub use output::{read_series_csv, write_atomic, Table};
pub use runner::{
    emit_histogram, execute, output_root, run_experiment, Artifacts, ExperimentOutput,
    HistogramReport, Manifest, OUTPUT_ROOT_ENV,
};
