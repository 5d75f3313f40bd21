//! The run manifest: a single JSON document sufficient to reproduce a run
//! bit-for-bit. It is written next to the outputs and is itself accepted as
//! a config file by `fedshap run --config`.

use serde::{Deserialize, Serialize};

use fedshap_core::data::ScenarioConfig;
use fedshap_core::federation::HyperParams;

use crate::config::Algorithm;

/// File names a run produces inside its output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOutputs {
    pub rounds_csv: String,
    pub shapley_csv: String,
    pub swaps_csv: Option<String>,
    pub class_relevance_csv: Option<String>,
    pub manifest_json: String,
    pub checkpoint: String,
}

impl RunOutputs {
    fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            rounds_csv: "rounds.csv".into(),
            shapley_csv: "shapley.csv".into(),
            swaps_csv: matches!(algorithm, Algorithm::SfedavgLabelStd).then(|| "swaps.csv".into()),
            class_relevance_csv: matches!(algorithm, Algorithm::ClassSpecific)
                .then(|| "class_relevance.csv".into()),
            manifest_json: "manifest.json".into(),
            checkpoint: "model.fshp".into(),
        }
    }
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub master_seed: u64,
    pub algorithm: Algorithm,
    pub hyper: HyperParams,
    pub scenario: ScenarioConfig,
    pub code_version: String,
    pub outputs: RunOutputs,
}

impl RunManifest {
    pub fn new(
        master_seed: u64,
        algorithm: Algorithm,
        hyper: HyperParams,
        scenario: ScenarioConfig,
    ) -> Self {
        Self {
            master_seed,
            algorithm,
            hyper,
            scenario,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: RunOutputs::for_algorithm(algorithm),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
