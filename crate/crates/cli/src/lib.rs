//! Experiment harness: configuration parsing, run orchestration, metrics
//! files, and seed sweeps for the federated-learning simulator.
//!
//! A run writes into its output directory:
//! - `rounds.csv` — per-round validation/test accuracy, sampled clients,
//!   and the full relevance vector;
//! - `shapley.csv` — per-round per-sampled-client Shapley values (rows only
//!   for the S-FedAvg family);
//! - `swaps.csv` — label-standardization swap log (label-std runs only);
//! - `class_relevance.csv` — per-class relevance series (class-specific
//!   runs only);
//! - `manifest.json` — everything needed to reproduce the run bit-for-bit;
//! - `model.fshp` — final model checkpoint.

pub mod config;
pub mod manifest;
pub mod runner;
pub mod sweep;

pub use config::{parse_config, Algorithm, ConfigFile, Overrides, Resolved};
pub use manifest::{RunManifest, RunOutputs};
pub use runner::{run_experiment, ExperimentOutcome};
pub use sweep::run_sweep;

/// Error carrying the process exit code: 1 for configuration problems,
/// 2 for runtime failures.
#[derive(Debug)]
pub struct ExitError {
    pub code: i32,
    pub source: anyhow::Error,
}

impl std::fmt::Display for ExitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for ExitError {}

pub(crate) fn config_error(e: impl Into<anyhow::Error>) -> ExitError {
    ExitError {
        code: 1,
        source: e.into(),
    }
}

pub(crate) fn runtime_error(e: impl Into<anyhow::Error>) -> ExitError {
    ExitError {
        code: 2,
        source: e.into(),
    }
}
