//! Orchestration for the gnndm pipeline: configuration, a manifest of what
//! each stage produced, and the stages themselves.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use stages::{run_all, run_stage, RunContext, Stage, StageOutcome, SummaryRow};
