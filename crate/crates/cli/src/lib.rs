//! `vivid` command-line driver: JSON experiment configs, the five commands
//! and reproducible run manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use crate::commands::{cmd_ablate, cmd_evaluate, cmd_render_dataset, cmd_synthesize, cmd_trajectory, AblationRow};
pub use crate::config::{config_schema, load_config, parse_config, ExperimentConfig};
pub use crate::error::CliError;
pub use crate::manifest::Manifest;
