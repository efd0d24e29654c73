//! Config-driven experiment runner behind the `tsgdm` binary.

pub mod config;
pub mod experiment;

pub use config::{
    parse_config, parse_config_with_overrides, ConfigError, ExperimentConfig, SweepAxis,
};
pub use experiment::{
    run_experiment, run_sweep, ExperimentError, ExperimentReport, Summary, SweepRow,
};
