//! Experiment harness: config loading, seeded episode fan-out, CSV/JSON
//! outputs, and SVG regret plots.

pub mod config;
pub mod plot;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_diagnose, run_experiment, ExperimentOutput};
