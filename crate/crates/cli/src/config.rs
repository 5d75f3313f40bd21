//! Configuration: a JSON file plus command-line flag overrides. Unknown
//! keys are rejected so typos never silently fall back to defaults. A saved
//! `manifest.json` is also accepted wherever a config file is, which is how
//! runs get reproduced.

use std::path::Path;

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use fedshap_core::data::ScenarioConfig;
use fedshap_core::federation::HyperParams;

use crate::manifest::RunManifest;
use crate::{config_error, ExitError};

/// Which algorithm a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fedavg,
    Sfedavg,
    SfedavgLabelStd,
    ClassSpecific,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Fedavg => "fedavg",
            Algorithm::Sfedavg => "sfedavg",
            Algorithm::SfedavgLabelStd => "sfedavg-label-std",
            Algorithm::ClassSpecific => "class-specific",
        }
    }
}

/// The config file shape. Every section is optional; omitted fields resolve
/// to the reference defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Command-line overrides; flags beat file values.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
}

/// A fully resolved run description.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub hyper: HyperParams,
    pub scenario: ScenarioConfig,
    pub algorithm: Algorithm,
    pub seed: u64,
}

const DEFAULT_SEED: u64 = 1;

fn read_config(path: &Path) -> Result<ConfigFile, ExitError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(config_error)?;
    match serde_json::from_str::<ConfigFile>(&text) {
        Ok(config) => Ok(config),
        Err(config_parse_err) => {
            // A manifest is a superset of a config; accept it for reruns.
            if let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) {
                return Ok(ConfigFile {
                    hyper: manifest.hyper,
                    scenario: manifest.scenario,
                    algorithm: Some(manifest.algorithm),
                    seed: Some(manifest.master_seed),
                });
            }
            Err(config_error(anyhow!(
                "invalid config {}: {config_parse_err}",
                path.display()
            )))
        }
    }
}

/// Resolves (file, flags, defaults) into a run description.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<Resolved, ExitError> {
    let file = match path {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let mut hyper = file.hyper;
    if let Some(rounds) = overrides.rounds {
        hyper.rounds = rounds;
    }
    let algorithm = overrides
        .algorithm
        .or(file.algorithm)
        .unwrap_or(Algorithm::Sfedavg);
    let seed = overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let scenario = file.scenario;

    hyper.validate().map_err(config_error)?;
    if hyper.num_clients != scenario.num_clients {
        return Err(config_error(anyhow!(
            "hyper.num_clients ({}) and scenario.num_clients ({}) disagree",
            hyper.num_clients,
            scenario.num_clients
        )));
    }
    for corruption in &scenario.corrupted_clients {
        if corruption.client_id >= scenario.num_clients {
            return Err(config_error(anyhow!(
                "corrupted client {} out of range 0..{}",
                corruption.client_id,
                scenario.num_clients
            )));
        }
    }
    Ok(Resolved {
        hyper,
        scenario,
        algorithm,
        seed,
    })
}
