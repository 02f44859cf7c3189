//! Configuration loading and experiment drivers.

pub mod config;
pub mod experiment;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Profile, SweepKind, SweepMode};
pub use experiment::{run_convergence, run_sweep, ConvergenceRow, SweepRow};
