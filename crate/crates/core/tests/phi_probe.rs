//! Scratch probe: per-round relevance-gap dynamics under S-FedAvg on the
//! irrelevant scenario. Ignored by default.

use std::path::PathBuf;

use fedshap_core::data::{
    build_scenario_from, load_mnist_dir, Provenance, ScenarioConfig, ScenarioKind,
};
use fedshap_core::federation::{run_sfedavg, HyperParams};
use fedshap_core::nn::{Mlp, MlpArchitecture};
use fedshap_core::seeds;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
#[ignore]
fn probe_phi_separation() {
    let (train, test) = load_mnist_dir(&data_dir()).unwrap();
    let hp = HyperParams::default();
    let mlp = Mlp::new(MlpArchitecture::mnist_even());
    let config = ScenarioConfig {
        scenario: ScenarioKind::Irrelevant,
        ..ScenarioConfig::default()
    };
    let mut total_final = 0;
    let mut total_late = 0usize;
    let mut late_wins = 0usize;
    for seed in 1..=5u64 {
        let scenario = build_scenario_from(
            &train,
            &test,
            &config,
            seeds::derive_seed(seed, "scenario", 0, 0),
        )
        .unwrap();
        let rel: Vec<usize> = scenario
            .clients
            .iter()
            .filter(|c| c.provenance == Provenance::Relevant)
            .map(|c| c.client_id)
            .collect();
        let irr: Vec<usize> = scenario
            .clients
            .iter()
            .filter(|c| c.provenance != Provenance::Relevant)
            .map(|c| c.client_id)
            .collect();
        let state = run_sfedavg(&scenario, &mlp, &hp, seed, |_| {}).unwrap();
        let gap = |phi: &[f64]| {
            let a: f64 = rel.iter().map(|&c| phi[c]).sum::<f64>() / rel.len() as f64;
            let b: f64 = irr.iter().map(|&c| phi[c]).sum::<f64>() / irr.len() as f64;
            a - b
        };
        // Mean shapley gap per round (sampled clients only).
        let mut sv_rel = Vec::new();
        let mut sv_irr = Vec::new();
        for r in &state.history {
            if let Some(sv) = &r.shapley {
                for (c, v) in &sv.values {
                    if rel.contains(c) {
                        sv_rel.push(*v);
                    } else {
                        sv_irr.push(*v);
                    }
                }
            }
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = |xs: &[f64]| {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
        };
        let final_gap = gap(&state.history.last().unwrap().phi_snapshot);
        let late: Vec<f64> = state.history[49..]
            .iter()
            .map(|r| gap(&r.phi_snapshot))
            .collect();
        let wins = late.iter().filter(|&&g| g > 0.0).count();
        total_late += late.len();
        late_wins += wins;
        if final_gap > 0.0 {
            total_final += 1;
        }
        eprintln!(
            "seed {seed}: final gap {final_gap:+.4}, late mean gap {:+.4} (sd {:.4}), late wins {}/{}  sv rel {:+.4} irr {:+.4}",
            mean(&late),
            sd(&late),
            wins,
            late.len(),
            mean(&sv_rel),
            mean(&sv_irr),
        );
    }
    eprintln!(
        "final-round wins {total_final}/5, pooled late fraction {:.3}",
        late_wins as f64 / total_late as f64
    );
}
