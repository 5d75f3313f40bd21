//! Seed sweeps: the same experiment across several master seeds, plus a
//! per-round mean/min/max summary.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};

use crate::config::Resolved;
use crate::manifest::RunManifest;
use crate::runner::{run_experiment, ExperimentOutcome};
use crate::{config_error, runtime_error, ExitError};

fn summary_csv(outcomes: &[(u64, ExperimentOutcome)]) -> String {
    let rounds = outcomes[0].1.rounds.len();
    let mut out = String::from(
        "round,val_acc_mean,val_acc_min,val_acc_max,test_acc_mean,test_acc_min,test_acc_max\n",
    );
    for r in 0..rounds {
        let vals: Vec<f64> = outcomes.iter().map(|(_, o)| o.rounds[r].val_acc).collect();
        let tests: Vec<f64> = outcomes.iter().map(|(_, o)| o.rounds[r].test_acc).collect();
        let stats = |xs: &[f64]| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (mean, min, max)
        };
        let (vm, vlo, vhi) = stats(&vals);
        let (tm, tlo, thi) = stats(&tests);
        let _ = writeln!(out, "{},{vm},{vlo},{vhi},{tm},{tlo},{thi}", r + 1);
    }
    out
}

/// Runs one experiment per seed into `out_dir/seed_<n>/`, then writes
/// `out_dir/summary.csv`. A failing seed aborts the sweep; completed run
/// directories are left in place.
pub fn run_sweep(resolved: &Resolved, seeds: &[u64], out_dir: &Path) -> Result<(), ExitError> {
    if seeds.is_empty() {
        return Err(config_error(anyhow!("sweep needs at least one seed")));
    }
    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let manifest = RunManifest::new(
            seed,
            resolved.algorithm,
            resolved.hyper.clone(),
            resolved.scenario.clone(),
        );
        let run_dir = out_dir.join(format!("seed_{seed}"));
        log::info!(
            "sweep seed {seed} ({} into {})",
            resolved.algorithm.as_str(),
            run_dir.display()
        );
        let outcome = run_experiment(&manifest, &run_dir)?;
        outcomes.push((seed, outcome));
    }
    std::fs::write(out_dir.join("summary.csv"), summary_csv(&outcomes))
        .with_context(|| format!("cannot write {}", out_dir.join("summary.csv").display()))
        .map_err(runtime_error)?;
    Ok(())
}
