//! Config-driven experiment runner: parses a TOML experiment, runs its
//! stages in order and writes CSV/JSON artifacts plus a run manifest.

pub mod config;
pub mod manifest;
pub mod report;
pub mod rng;
pub mod stages;
pub mod systems;

pub use config::{Budgets, ConfigError, ExperimentConfig, StageSpec, SystemSpec};
pub use manifest::{run, RunManifest, StageRecord};
pub use stages::Stage;
