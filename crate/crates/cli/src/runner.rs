//! Runs one experiment end to end and writes its metrics files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;

use fedshap_core::data::{build_scenario, LabelMap, ScenarioSplit};
use fedshap_core::federation::{run_fedavg, run_sfedavg, RoundRecord};
use fedshap_core::frcs::{run_sfedavg_class_specific, run_sfedavg_label_std};
use fedshap_core::nn::{Mlp, MlpArchitecture, ParamVector};
use fedshap_core::{checkpoint, seeds};

use crate::config::Algorithm;
use crate::manifest::RunManifest;
use crate::{config_error, runtime_error, ExitError};

/// Per-round accuracy series, for sweep summaries.
#[derive(Clone, Debug)]
pub struct RoundSummary {
    pub round: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rounds: Vec<RoundSummary>,
}

fn rounds_csv(history: &[RoundRecord], num_clients: usize) -> String {
    let mut out = String::from("round,val_acc,test_acc,sampled_ids");
    for client in 0..num_clients {
        let _ = write!(out, ",phi_{client}");
    }
    out.push('\n');
    for record in history {
        let sampled: Vec<String> = record.sampled.iter().map(|c| c.to_string()).collect();
        let _ = write!(
            out,
            "{},{},{},{}",
            record.round,
            record.validation_accuracy,
            record.test_accuracy,
            sampled.join(";")
        );
        for value in &record.phi_snapshot {
            let _ = write!(out, ",{value}");
        }
        out.push('\n');
    }
    out
}

fn shapley_csv(history: &[RoundRecord]) -> String {
    let mut out = String::from("round,client_id,shapley_value,num_permutations\n");
    for record in history {
        if let Some(sv) = &record.shapley {
            for (client, value) in &sv.values {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    record.round, client, value, sv.num_permutations_used
                );
            }
        }
    }
    out
}

fn raw_label(label_map: &LabelMap, mapped: u8) -> u8 {
    label_map.to_raw(mapped).expect("mapped label is in range")
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExitError> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime_error)
}

fn save_checkpoint(path: &Path, params: &ParamVector) -> Result<(), ExitError> {
    checkpoint::save(path, params)
        .with_context(|| format!("cannot write checkpoint {}", path.display()))
        .map_err(runtime_error)
}

/// Executes the manifest into `out_dir`. Writes `manifest.json` first, then
/// the run's CSVs and final checkpoint.
pub fn run_experiment(
    manifest: &RunManifest,
    out_dir: &Path,
) -> Result<ExperimentOutcome, ExitError> {
    manifest.hyper.validate().map_err(config_error)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(runtime_error)?;
    write_file(
        &out_dir.join(&manifest.outputs.manifest_json),
        &(manifest.to_json_pretty() + "\n"),
    )?;

    let scenario_seed = seeds::derive_seed(manifest.master_seed, "scenario", 0, 0);
    let scenario: ScenarioSplit =
        build_scenario(&manifest.scenario, scenario_seed).map_err(config_error)?;
    let arch = MlpArchitecture::mnist_even();
    assert_eq!(arch.output_dim, scenario.label_map.num_classes());
    let mlp = Mlp::new(arch);

    let started = Instant::now();
    let total_rounds = manifest.hyper.rounds;
    let observer = |record: &RoundRecord| {
        log::info!(
            "round {:>3}/{} val_acc {:.4} test_acc {:.4} elapsed {:.1}s",
            record.round,
            total_rounds,
            record.validation_accuracy,
            record.test_accuracy,
            started.elapsed().as_secs_f64()
        );
    };

    let hp = &manifest.hyper;
    let seed = manifest.master_seed;
    let (history, final_params) = match manifest.algorithm {
        Algorithm::Fedavg => {
            let state = run_fedavg(&scenario, &mlp, hp, seed, observer).map_err(runtime_error)?;
            (state.history, state.params)
        }
        Algorithm::Sfedavg => {
            let state = run_sfedavg(&scenario, &mlp, hp, seed, observer).map_err(runtime_error)?;
            (state.history, state.params)
        }
        Algorithm::SfedavgLabelStd => {
            let run = run_sfedavg_label_std(&scenario, &mlp, hp, seed, observer)
                .map_err(runtime_error)?;
            let mut swaps =
                String::from("round,client_id,from_label,to_label,fraction_pct,threshold_pct\n");
            for event in &run.swaps {
                let d = &event.decision;
                let _ = writeln!(
                    swaps,
                    "{},{},{},{},{},{}",
                    event.round,
                    d.client_id,
                    raw_label(&scenario.label_map, d.from_label),
                    raw_label(&scenario.label_map, d.to_label),
                    d.fraction_pct,
                    d.threshold_pct
                );
            }
            let name = manifest.outputs.swaps_csv.as_deref().unwrap_or("swaps.csv");
            write_file(&out_dir.join(name), &swaps)?;
            (run.final_state.history, run.final_state.params)
        }
        Algorithm::ClassSpecific => {
            let run = run_sfedavg_class_specific(&scenario, &mlp, hp, seed, observer)
                .map_err(runtime_error)?;
            let mut csv = String::from("round,class,client_id,phi_c\n");
            for (idx, snapshot) in run.class_history.iter().enumerate() {
                let round = idx + 1;
                for (class, phi) in snapshot.iter().enumerate() {
                    let digit = raw_label(&scenario.label_map, class as u8);
                    for (client, value) in phi.iter().enumerate() {
                        let _ = writeln!(csv, "{round},{digit},{client},{value}");
                    }
                }
            }
            let name = manifest
                .outputs
                .class_relevance_csv
                .as_deref()
                .unwrap_or("class_relevance.csv");
            write_file(&out_dir.join(name), &csv)?;
            (run.final_state.history, run.final_state.params)
        }
    };

    write_file(
        &out_dir.join(&manifest.outputs.rounds_csv),
        &rounds_csv(&history, hp.num_clients),
    )?;
    write_file(
        &out_dir.join(&manifest.outputs.shapley_csv),
        &shapley_csv(&history),
    )?;
    save_checkpoint(&out_dir.join(&manifest.outputs.checkpoint), &final_params)?;

    Ok(ExperimentOutcome {
        rounds: history
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                val_acc: r.validation_accuracy,
                test_acc: r.test_accuracy,
            })
            .collect(),
    })
}
