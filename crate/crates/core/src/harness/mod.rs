//! Experiment orchestration, configuration and artifacts.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, Population, Scenario, StrategySpec};
pub use output::{emit_csv, fmt_g, write_comparison, write_run};
pub use run::{
    build_world, compare_strategies, run_experiment, run_on_world, with_threads, RunSummary, World,
};
