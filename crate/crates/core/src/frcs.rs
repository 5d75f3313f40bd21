//! The two relevant-client-selection applications built on S-FedAvg:
//! class-specific client valuation (phi_c) and data-label standardization
//! (S-FedAvg-Label-Std).
//!
//! Class-specific valuation runs the same cooperative game with the
//! validation set restricted to one class; because that restriction is a
//! pure filter of D_V, every class game shares the per-coalition confusion
//! matrices already computed for the main game.
//!
//! Label standardization targets clients whose labels are permuted relative
//! to the server's convention. Once validation accuracy stabilizes, the
//! server broadcasts the model and a per-class precision dictionary; each
//! signaled client relabels any label-partition whose majority predicted
//! class beats that class's precision, and acknowledging clients get their
//! relevance reset to the vector mean.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Dataset, ScenarioSplit};
use crate::error::{Error, Result};
use crate::federation::{
    finish_round, sample_clients, train_sampled, update_relevance, HyperParams, RelevanceVector,
    RoundRecord, RoundState,
};
use crate::nn::{ClientUpdate, Mlp, ParamVector};
use crate::seeds;
use crate::shapley::{ClientId, CoalitionGame, GameConfig, ShapleyResult};

/// Which clients receive the label-standardization signal.
///
/// The conservative default signals everyone: standardization is a no-op for
/// clients whose labels already match the server's convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalPolicy {
    #[default]
    AllClients,
    /// Only clients whose relevance sits strictly below the vector mean.
    BelowMeanPhi,
}

/// Per-class relevance vectors, one per target class, updated with the same
/// (alpha, beta) rule as the main vector and the same sampled-only scope.
#[derive(Clone, Debug)]
pub struct ClassRelevance {
    pub per_class: Vec<RelevanceVector>,
}

impl ClassRelevance {
    pub fn uniform(num_classes: usize, num_clients: usize) -> Self {
        Self {
            per_class: (0..num_classes)
                .map(|_| RelevanceVector::uniform(num_clients))
                .collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn get(&self, class: usize) -> &RelevanceVector {
        &self.per_class[class]
    }
}

/// Per-class precision of the current global model on D_V, in percent.
/// Classes the model never predicted are undefined and act as threshold 100,
/// so no partition can ever swap toward them.
#[derive(Clone, Debug, PartialEq)]
pub struct PerformanceDict {
    entries: Vec<Option<f64>>,
}

impl PerformanceDict {
    pub fn new(entries: Vec<Option<f64>>) -> Self {
        Self { entries }
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    /// Precision percentage for a class, `None` when undefined.
    pub fn get(&self, class: usize) -> Option<f64> {
        self.entries[class]
    }

    /// Swap threshold: the precision percentage, or 100 when undefined.
    pub fn threshold(&self, class: usize) -> f64 {
        self.entries[class].unwrap_or(100.0)
    }
}

/// Class-wise precision of `params` on the validation set, as percentages.
pub fn build_performance_dict(
    mlp: &Mlp,
    params: &ParamVector,
    validation: &Dataset,
) -> Result<PerformanceDict> {
    let report = mlp.evaluate(params, validation)?;
    Ok(PerformanceDict::new(
        report
            .per_class_precision
            .iter()
            .map(|p| p.map(|v| v * 100.0))
            .collect(),
    ))
}

/// Sliding-window stabilization check: stabilized once the last `zeta`
/// validation accuracies (percent) span at most `lambda` percentage points.
#[derive(Clone, Debug)]
pub struct StabilizationDetector {
    window: VecDeque<f64>,
    lambda: f64,
    zeta: usize,
}

impl StabilizationDetector {
    pub fn new(lambda: f64, zeta: usize) -> Self {
        assert!(zeta >= 1, "window length must be positive");
        Self {
            window: VecDeque::with_capacity(zeta),
            lambda,
            zeta,
        }
    }

    /// Pushes a new accuracy (percent) and reports the current verdict.
    pub fn check_stabilized(&mut self, accuracy_pct: f64) -> bool {
        if self.window.len() == self.zeta {
            self.window.pop_front();
        }
        self.window.push_back(accuracy_pct);
        self.is_stabilized()
    }

    pub fn is_stabilized(&self) -> bool {
        if self.window.len() < self.zeta {
            return false;
        }
        let max = self
            .window
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = self.window.iter().copied().fold(f64::INFINITY, f64::min);
        max - min <= self.lambda
    }
}

/// One partition relabeling performed during standardization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SwapDecision {
    pub client_id: ClientId,
    /// Mapped class index the partition was labeled with.
    pub from_label: u8,
    /// Mapped class index the partition was relabeled to.
    pub to_label: u8,
    /// Share of the partition predicted as `to_label`, in percent.
    pub fraction_pct: f64,
    /// The precision threshold that share had to beat.
    pub threshold_pct: f64,
}

/// Client-side standardization pass.
///
/// The shard is split label-wise; every partition is classified with the
/// downloaded model; a partition whose majority predicted label `L` differs
/// from its own label and whose majority share (percent) exceeds
/// `pdict(L)` is relabeled to `L` wholesale. Partitions are snapshotted
/// before any relabeling, so one pass can never cascade. Ties produce no
/// swap, and pixels are never touched.
pub fn client_label_standardize(
    client: &ClientDataset,
    mlp: &Mlp,
    params: &ParamVector,
    pdict: &PerformanceDict,
) -> (ClientDataset, Vec<SwapDecision>) {
    let mut new_examples = client.examples.clone();
    let mut decisions = Vec::new();
    for own_label in client.distinct_labels() {
        let indices: Vec<usize> = client
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == own_label)
            .map(|(i, _)| i)
            .collect();
        let partition: Vec<_> = indices
            .iter()
            .map(|&i| client.examples[i].clone())
            .collect();
        let predictions = mlp.predict_batch(params, &partition);

        let mut counts = vec![0usize; mlp.arch().output_dim];
        for &p in &predictions {
            counts[p] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let winners: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == top)
            .map(|(i, _)| i)
            .collect();
        if winners.len() != 1 {
            continue; // ambiguous majority: never relabel on a tie
        }
        let majority = winners[0] as u8;
        let fraction_pct = top as f64 / partition.len() as f64 * 100.0;
        let threshold_pct = pdict.threshold(majority as usize);
        if majority != own_label && fraction_pct > threshold_pct {
            for &i in &indices {
                new_examples[i].label = majority;
            }
            decisions.push(SwapDecision {
                client_id: client.client_id,
                from_label: own_label,
                to_label: majority,
                fraction_pct,
                threshold_pct,
            });
        }
    }
    (
        ClientDataset {
            client_id: client.client_id,
            examples: new_examples,
            provenance: client.provenance,
        },
        decisions,
    )
}

/// Sets each acknowledged client's relevance to the mean of the current
/// vector (computed before any reset); everyone else is untouched.
pub fn reset_relevance_to_mean(
    phi: &RelevanceVector,
    acknowledged: &BTreeSet<ClientId>,
) -> RelevanceVector {
    let mean = phi.mean();
    let mut out = phi.as_slice().to_vec();
    for &client in acknowledged {
        out[client] = mean;
    }
    RelevanceVector::from_vec(out)
}

/// Monte-Carlo Shapley over a class-restricted validation set V_c.
///
/// `class_validation` must be non-empty and single-class. Values are
/// identical to [`CoalitionGame::class_monte_carlo_shapley`] on the full
/// validation set when V_c is exactly its class-c filter.
pub fn class_specific_shapley(
    mlp: &Mlp,
    base_params: &ParamVector,
    players: Vec<(ClientId, &ClientUpdate)>,
    class_validation: &Dataset,
    permutations: usize,
    seed: u64,
    config: GameConfig,
) -> Result<ShapleyResult> {
    if class_validation.is_empty() {
        return Err(Error::EmptyDataset("class validation set"));
    }
    let class = class_validation.examples[0].label;
    if class_validation.iter().any(|e| e.label != class) {
        return Err(Error::InvalidInput(
            "class validation set mixes labels".into(),
        ));
    }
    let game = CoalitionGame::new(mlp, base_params, players, class_validation, config)?;
    game.monte_carlo_shapley(permutations, seed)
}

/// A swap and the round it happened in.
#[derive(Clone, Debug)]
pub struct SwapEvent {
    pub round: usize,
    pub decision: SwapDecision,
}

/// Outcome of an S-FedAvg-Label-Std run.
#[derive(Debug)]
pub struct LabelStdRun {
    pub final_state: RoundState,
    pub swaps: Vec<SwapEvent>,
    /// (round, client) relevance resets following acknowledgments.
    pub resets: Vec<(usize, ClientId)>,
    /// First round whose validation accuracy completed a stable window.
    pub stabilized_round: Option<usize>,
    /// Client shards as they stood after the final round's swaps.
    pub final_clients: Vec<ClientDataset>,
}

/// S-FedAvg with label standardization.
///
/// Runs the normal S-FedAvg loop; at the start of every round in which the
/// stabilization detector currently reports stabilized, the server
/// broadcasts (theta, P_dict) to the signaled clients, applies their swaps
/// to the local copies of their shards, and resets acknowledging clients'
/// relevance to the vector mean.
pub fn run_sfedavg_label_std(
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
    master_seed: u64,
    mut observer: impl FnMut(&RoundRecord),
) -> Result<LabelStdRun> {
    hp.validate()?;
    let mut scenario = scenario.clone();
    let mut state = RoundState::new(mlp, hp, master_seed);
    let mut detector = StabilizationDetector::new(hp.lambda, hp.zeta);
    let mut swaps = Vec::new();
    let mut resets = Vec::new();
    let mut stabilized_round = None;

    for _ in 0..hp.rounds {
        let round = state.round_index + 1;
        if detector.is_stabilized() {
            let pdict = build_performance_dict(mlp, &state.params, &scenario.validation)?;
            let signaled: Vec<ClientId> = match hp.signal_policy {
                SignalPolicy::AllClients => (0..hp.num_clients).collect(),
                SignalPolicy::BelowMeanPhi => {
                    let mean = state.phi.mean();
                    (0..hp.num_clients)
                        .filter(|&c| state.phi.get(c) < mean)
                        .collect()
                }
            };
            let results: Vec<(ClientId, ClientDataset, Vec<SwapDecision>)> = signaled
                .par_iter()
                .map(|&client_id| {
                    let (dataset, decisions) = client_label_standardize(
                        &scenario.clients[client_id],
                        mlp,
                        &state.params,
                        &pdict,
                    );
                    (client_id, dataset, decisions)
                })
                .collect();
            let mut acknowledged = BTreeSet::new();
            for (client_id, dataset, decisions) in results {
                if decisions.is_empty() {
                    continue;
                }
                scenario.clients[client_id] = dataset;
                acknowledged.insert(client_id);
                for decision in decisions {
                    swaps.push(SwapEvent { round, decision });
                }
            }
            if !acknowledged.is_empty() {
                state.phi = reset_relevance_to_mean(&state.phi, &acknowledged);
                for &client_id in &acknowledged {
                    resets.push((round, client_id));
                }
            }
        }

        state = crate::federation::run_round_sfedavg(state, &scenario, mlp, hp)?;
        let record = state.history.last().unwrap();
        let stabilized = detector.check_stabilized(record.validation_accuracy * 100.0);
        if stabilized && stabilized_round.is_none() {
            stabilized_round = Some(round);
        }
        observer(record);
    }

    Ok(LabelStdRun {
        final_state: state,
        swaps,
        resets,
        stabilized_round,
        final_clients: scenario.clients,
    })
}

/// Outcome of a class-specific S-FedAvg run.
#[derive(Debug)]
pub struct ClassSpecificRun {
    pub final_state: RoundState,
    pub class_relevance: ClassRelevance,
    /// Per-round snapshots of every class relevance vector, indexed
    /// `[round - 1][class][client]`.
    pub class_history: Vec<Vec<Vec<f64>>>,
}

/// S-FedAvg that additionally maintains one relevance vector per target
/// class, scored against the class-filtered validation set. All class games
/// reuse the main game's per-coalition evaluations.
pub fn run_sfedavg_class_specific(
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
    master_seed: u64,
    mut observer: impl FnMut(&RoundRecord),
) -> Result<ClassSpecificRun> {
    hp.validate()?;
    let num_classes = mlp.arch().output_dim;
    for class in 0..num_classes {
        if scenario.validation.filter_label(class as u8).is_empty() {
            return Err(Error::InvalidInput(format!(
                "validation set has no examples of class {class}; V_{class} would be empty"
            )));
        }
    }
    let mut state = RoundState::new(mlp, hp, master_seed);
    let mut class_relevance = ClassRelevance::uniform(num_classes, hp.num_clients);
    let mut class_history = Vec::with_capacity(hp.rounds);

    for _ in 0..hp.rounds {
        let round = state.round_index + 1;
        let sampled = sample_clients(
            &state.phi,
            hp.clients_per_round,
            seeds::derive_seed(master_seed, "sample", round as u64, 0),
        );
        let updates = train_sampled(&sampled, scenario, mlp, &state, hp, round);
        let players: Vec<(ClientId, &ClientUpdate)> =
            updates.iter().map(|(id, u)| (*id, u)).collect();
        let game = CoalitionGame::new(
            mlp,
            &state.params,
            players,
            &scenario.validation,
            GameConfig {
                empty_coalition_baseline: hp.empty_coalition_baseline,
                ..GameConfig::default()
            },
        )?;
        let sv = game.monte_carlo_shapley(
            hp.mc_permutations,
            seeds::derive_seed(master_seed, "shapley", round as u64, 0),
        )?;
        for class in 0..num_classes {
            let sv_c = game.class_monte_carlo_shapley(
                class,
                hp.mc_permutations,
                seeds::derive_seed(master_seed, "shapley-class", round as u64, class as u64),
            )?;
            class_relevance.per_class[class] = update_relevance(
                &class_relevance.per_class[class],
                &sv_c,
                hp.alpha,
                hp.beta,
                &sampled,
            )?;
        }
        drop(game);
        let phi_new = update_relevance(&state.phi, &sv, hp.alpha, hp.beta, &sampled)?;
        state = finish_round(
            state,
            scenario,
            mlp,
            hp,
            round,
            sampled,
            &updates,
            Some(sv),
            phi_new,
        )?;
        class_history.push(
            class_relevance
                .per_class
                .iter()
                .map(|rv| rv.as_slice().to_vec())
                .collect(),
        );
        observer(state.history.last().unwrap());
    }

    Ok(ClassSpecificRun {
        final_state: state,
        class_relevance,
        class_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelMap, LabeledExample, Provenance};
    use crate::nn::{sgd_step, Minibatch, MlpArchitecture};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stabilization_detector_examples() {
        let mut d = StabilizationDetector::new(2.0, 5);
        for acc in [90.0, 90.0, 90.0, 90.0] {
            assert!(!d.check_stabilized(acc));
        }
        assert!(d.check_stabilized(90.0));

        let mut d = StabilizationDetector::new(2.0, 5);
        let verdicts: Vec<bool> = [90.0, 91.0, 93.0, 90.0, 90.0]
            .into_iter()
            .map(|a| d.check_stabilized(a))
            .collect();
        assert!(!verdicts[4], "spread 3 > 2 must not stabilize");

        // The window slides: once the 93 falls out, it can stabilize.
        assert!(!d.check_stabilized(90.5)); // window 91,93,90,90,90.5
        assert!(!d.check_stabilized(90.0)); // 93 still in window
        assert!(d.check_stabilized(91.0)); // window 90,90,90.5,90,91
    }

    #[test]
    fn reset_relevance_examples() {
        let phi = RelevanceVector::from_vec(vec![0.1, 0.2, 0.3]);
        let ack: BTreeSet<ClientId> = [0].into_iter().collect();
        let reset = reset_relevance_to_mean(&phi, &ack);
        assert_abs_diff_eq!(reset.get(0), 0.2, epsilon = 1e-15);
        assert_eq!(reset.get(1), 0.2);
        assert_eq!(reset.get(2), 0.3);

        let none: BTreeSet<ClientId> = BTreeSet::new();
        assert_eq!(reset_relevance_to_mean(&phi, &none), phi);

        let all: BTreeSet<ClientId> = (0..3).collect();
        let reset = reset_relevance_to_mean(&phi, &all);
        for c in 0..3 {
            assert_abs_diff_eq!(reset.get(c), 0.2, epsilon = 1e-15);
        }
    }

    // --- shared tiny separable task ---

    fn tiny_mlp() -> Mlp {
        Mlp::new(MlpArchitecture::new(5, vec![10], 3).unwrap())
    }

    fn separable_example(rng: &mut ChaCha8Rng, label: u8) -> LabeledExample {
        let pixels: Vec<f64> = (0..5)
            .map(|p| {
                let base = if p == label as usize { 0.9 } else { 0.05 };
                base + 0.05 * rng.gen::<f64>()
            })
            .collect();
        LabeledExample {
            pixels: pixels.into(),
            label,
        }
    }

    fn separable_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            (0..n)
                .map(|i| separable_example(&mut rng, (i % 3) as u8))
                .collect(),
        )
    }

    /// Fits the tiny model until it classifies `data` perfectly.
    fn fitted_params(mlp: &Mlp, data: &Dataset) -> ParamVector {
        let mut params = mlp.init_params(5);
        for _ in 0..200 {
            let batch = Minibatch::new(&data.examples).unwrap();
            let (_, grad) = mlp.loss_and_grad(&params, &batch);
            params = sgd_step(params, &grad, 0.5);
        }
        assert_eq!(mlp.evaluate(&params, data).unwrap().accuracy, 1.0);
        params
    }

    #[test]
    fn performance_dict_perfect_model_is_all_100() {
        let mlp = tiny_mlp();
        let data = separable_dataset(60, 1);
        let params = fitted_params(&mlp, &data);
        let pdict = build_performance_dict(&mlp, &params, &data).unwrap();
        for class in 0..3 {
            assert_abs_diff_eq!(pdict.get(class).unwrap(), 100.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn performance_dict_constant_predictor() {
        let mlp = tiny_mlp();
        let params = ParamVector::zeros(mlp.param_len());
        let data = separable_dataset(30, 2); // balanced over 3 classes
        let pdict = build_performance_dict(&mlp, &params, &data).unwrap();
        assert_abs_diff_eq!(pdict.get(0).unwrap(), 100.0 / 3.0, epsilon = 1e-9);
        assert_eq!(pdict.get(1), None);
        assert_eq!(pdict.get(2), None);
        assert_eq!(pdict.threshold(1), 100.0);
    }

    #[test]
    fn performance_dict_matches_enumerated_columns() {
        let mlp = tiny_mlp();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ParamVector::from_vec(
            (0..mlp.param_len())
                .map(|_| rng.gen_range(-0.4..0.4))
                .collect(),
        );
        let data = separable_dataset(50, 4);
        let pdict = build_performance_dict(&mlp, &params, &data).unwrap();
        // Hand-enumerate the confusion columns from per-example predictions.
        let mut predicted_total = vec![0usize; 3];
        let mut predicted_correct = vec![0usize; 3];
        for e in data.iter() {
            let p = mlp.predict(&params, &e.pixels).unwrap();
            predicted_total[p] += 1;
            if p == e.label as usize {
                predicted_correct[p] += 1;
            }
        }
        for class in 0..3 {
            match pdict.get(class) {
                Some(pct) => assert_abs_diff_eq!(
                    pct,
                    100.0 * predicted_correct[class] as f64 / predicted_total[class] as f64,
                    epsilon = 1e-9
                ),
                None => assert_eq!(predicted_total[class], 0),
            }
        }
    }

    fn client_from(data: &Dataset, client_id: usize) -> ClientDataset {
        ClientDataset {
            client_id,
            examples: data.examples.clone(),
            provenance: Provenance::Relevant,
        }
    }

    #[test]
    fn uncorrupted_client_never_swaps_under_perfect_model() {
        let mlp = tiny_mlp();
        let data = separable_dataset(60, 6);
        let params = fitted_params(&mlp, &data);
        let pdict = build_performance_dict(&mlp, &params, &data).unwrap();
        let client = client_from(&separable_dataset(30, 7), 0);
        let (standardized, decisions) = client_label_standardize(&client, &mlp, &params, &pdict);
        assert!(decisions.is_empty());
        for (a, b) in client.examples.iter().zip(&standardized.examples) {
            assert_eq!(a.label, b.label);
        }
    }

    /// Flips one validation label per true class so every predicted column
    /// carries an error and no precision threshold sits at 100.
    fn imperfect(mut validation: Dataset) -> Dataset {
        for i in 0..3 {
            validation.examples[i].label = (validation.examples[i].label + 1) % 3;
        }
        validation
    }

    #[test]
    fn corrupted_client_swaps_back_exactly() {
        let mlp = tiny_mlp();
        let train = separable_dataset(90, 8);
        let params = fitted_params(&mlp, &train);
        // Validation has imperfections so thresholds sit below 100.
        let validation = imperfect(separable_dataset(60, 9));
        let pdict = build_performance_dict(&mlp, &params, &validation).unwrap();
        assert!((0..3).all(|c| pdict.threshold(c) < 100.0));

        let clean = client_from(&separable_dataset(30, 10), 3);
        let corrupted = crate::data::corrupt_swap_labels(&clean, 1, 2).unwrap();
        let (standardized, decisions) = client_label_standardize(&corrupted, &mlp, &params, &pdict);
        // Both mislabeled partitions swap back; composition restores the
        // original labels bit-for-bit.
        assert_eq!(decisions.len(), 2);
        for d in &decisions {
            assert!(d.fraction_pct > d.threshold_pct);
            assert!(
                (d.from_label == 1 && d.to_label == 2) || (d.from_label == 2 && d.to_label == 1)
            );
        }
        for (orig, fixed) in clean.examples.iter().zip(&standardized.examples) {
            assert_eq!(orig.label, fixed.label);
            assert!(std::sync::Arc::ptr_eq(&orig.pixels, &fixed.pixels));
        }
    }

    #[test]
    fn swaps_do_not_cascade_within_one_pass() {
        // Client holds labels 1 and 2; corruption relabels its 1s as 2s is
        // impossible to express with a transposition, so instead: all
        // examples are true class 2, split between labels 1 (wrong) and 2
        // (right). The wrong partition swaps to 2, and the right partition
        // must not react to the freshly added members.
        let mlp = tiny_mlp();
        let train = separable_dataset(90, 11);
        let params = fitted_params(&mlp, &train);
        let validation = imperfect(separable_dataset(60, 12));
        let pdict = build_performance_dict(&mlp, &params, &validation).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut examples = Vec::new();
        for i in 0..20 {
            let mut e = separable_example(&mut rng, 2);
            e.label = if i < 10 { 1 } else { 2 };
            examples.push(e);
        }
        let client = ClientDataset {
            client_id: 0,
            examples,
            provenance: Provenance::Corrupted,
        };
        let (standardized, decisions) = client_label_standardize(&client, &mlp, &params, &pdict);
        assert_eq!(decisions.len(), 1);
        assert_eq!((decisions[0].from_label, decisions[0].to_label), (1, 2));
        assert!(standardized.examples.iter().all(|e| e.label == 2));
    }

    #[test]
    fn uniformly_spread_predictions_never_swap() {
        // Predictions spread uniformly over the classes put the majority
        // share near 1/3 of a 100-point partition; any calibrated precision
        // from a stabilized model dwarfs that, so no swap can fire. The
        // binomial tail P(majority > 60 | p = 1/3, n = 100) is ~1e-8.
        let mlp = tiny_mlp();
        let params = fitted_params(&mlp, &separable_dataset(90, 60));
        let pdict = PerformanceDict::new(vec![Some(60.0), Some(60.0), Some(60.0)]);
        let mut any_swap = false;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut examples = Vec::new();
            for _ in 0..100 {
                let true_class = rng.gen_range(0..3) as u8;
                let mut e = separable_example(&mut rng, true_class);
                e.label = 0;
                examples.push(e);
            }
            let client = ClientDataset {
                client_id: 0,
                examples,
                provenance: Provenance::Relevant,
            };
            let (_, decisions) = client_label_standardize(&client, &mlp, &params, &pdict);
            any_swap |= !decisions.is_empty();
        }
        assert!(!any_swap);
    }

    // --- class-specific machinery ---

    fn useful_update(mlp: &Mlp, base: &ParamVector, data: &Dataset) -> ClientUpdate {
        let mut local = base.clone();
        for _ in 0..80 {
            let batch = Minibatch::new(&data.examples).unwrap();
            let (_, grad) = mlp.loss_and_grad(&local, &batch);
            local = sgd_step(local, &grad, 0.4);
        }
        local.sub(base)
    }

    #[test]
    fn class_specific_matches_shared_cache_path() {
        let mlp = tiny_mlp();
        let base = mlp.init_params(21);
        let validation = separable_dataset(60, 22);
        let delta = useful_update(&mlp, &base, &validation);
        let zero = ParamVector::zeros(base.len());
        let players = vec![(0usize, &delta), (1usize, &zero)];

        for class in 0..3u8 {
            let v_c = validation.filter_label(class);
            let general = class_specific_shapley(
                &mlp,
                &base,
                players.clone(),
                &v_c,
                8,
                77,
                GameConfig::default(),
            )
            .unwrap();
            let game = CoalitionGame::new(
                &mlp,
                &base,
                players.clone(),
                &validation,
                GameConfig::default(),
            )
            .unwrap();
            let optimized = game
                .class_monte_carlo_shapley(class as usize, 8, 77)
                .unwrap();
            assert_eq!(general.values, optimized.values);
        }
    }

    #[test]
    fn class_specific_rejects_bad_validation_sets() {
        let mlp = tiny_mlp();
        let base = mlp.init_params(1);
        let zero = ParamVector::zeros(base.len());
        let players = vec![(0usize, &zero)];
        assert!(class_specific_shapley(
            &mlp,
            &base,
            players.clone(),
            &Dataset::default(),
            4,
            0,
            GameConfig::default()
        )
        .is_err());
        let mixed = separable_dataset(10, 2);
        assert!(
            class_specific_shapley(&mlp, &base, players, &mixed, 4, 0, GameConfig::default())
                .is_err()
        );
    }

    #[test]
    fn perfect_class_update_dominates_class_game() {
        let mlp = tiny_mlp();
        // Zero base: the untouched model predicts class 0 everywhere, so the
        // base accuracy on V_2 is exactly 0.
        let base = ParamVector::zeros(mlp.param_len());
        let validation = separable_dataset(60, 32);
        let v2 = validation.filter_label(2);
        // One update trained on class-2 data only; the rest do nothing.
        let delta = useful_update(&mlp, &base, &v2);
        let mut with_delta = base.clone();
        for (i, v) in with_delta.values_mut().iter_mut().enumerate() {
            *v += delta.values()[i];
        }
        assert_eq!(mlp.evaluate(&with_delta, &v2).unwrap().accuracy, 1.0);
        let zero_a = ParamVector::zeros(base.len());
        let zero_b = ParamVector::zeros(base.len());
        let players = vec![(0usize, &delta), (1usize, &zero_a), (2usize, &zero_b)];
        let game = CoalitionGame::new(&mlp, &base, players, &v2, GameConfig::default()).unwrap();
        let result = game.exact_shapley().unwrap();
        let top = result.get(0).unwrap();
        assert!(top > result.get(1).unwrap());
        assert!(top > result.get(2).unwrap());
        // Identical (zero) updates share identical values by symmetry.
        assert_abs_diff_eq!(
            result.get(1).unwrap(),
            result.get(2).unwrap(),
            epsilon = 1e-12
        );
    }

    // --- end-to-end tiny runs ---

    fn tiny_scenario(corrupt_client: Option<usize>) -> ScenarioSplit {
        let mut clients: Vec<ClientDataset> = (0..4)
            .map(|client_id| client_from(&separable_dataset(30, 40 + client_id as u64), client_id))
            .collect();
        if let Some(id) = corrupt_client {
            clients[id] = crate::data::corrupt_swap_labels(&clients[id], 1, 2).unwrap();
        }
        ScenarioSplit {
            clients,
            // A few flipped validation labels keep precision thresholds
            // below 100 even once the model has converged, as on real data.
            validation: imperfect(separable_dataset(45, 50)),
            test: separable_dataset(45, 51),
            label_map: LabelMap::even_digits(),
            kappa: None,
        }
    }

    fn tiny_hp(rounds: usize) -> HyperParams {
        HyperParams {
            num_clients: 4,
            clients_per_round: 2,
            batch_size: 8,
            local_epochs: 2,
            rounds,
            mc_permutations: 4,
            client_lr: 0.3,
            lambda: 5.0,
            zeta: 3,
            ..HyperParams::default()
        }
    }

    #[test]
    fn clean_label_std_run_never_swaps_and_orders_protocol() {
        let mlp = tiny_mlp();
        let scenario = tiny_scenario(None);
        let run = run_sfedavg_label_std(&scenario, &mlp, &tiny_hp(10), 3, |_| {}).unwrap();
        assert!(run.swaps.is_empty());
        assert!(run.resets.is_empty());
        let stabilized = run.stabilized_round.expect("tiny task must stabilize");
        assert!(stabilized >= 3); // needs at least zeta rounds of history
    }

    #[test]
    fn corrupted_label_std_run_restores_labels() {
        let mlp = tiny_mlp();
        let scenario = tiny_scenario(Some(3));
        let clean = tiny_scenario(None);
        let run = run_sfedavg_label_std(&scenario, &mlp, &tiny_hp(12), 5, |_| {}).unwrap();
        let stabilized = run.stabilized_round.expect("tiny task must stabilize");
        assert!(
            !run.swaps.is_empty(),
            "corrupted client should eventually swap"
        );
        // No swap may precede stabilization.
        for event in &run.swaps {
            assert!(event.round > stabilized);
        }
        // Swaps land on the corrupted client and restore its shard.
        assert!(run.swaps.iter().all(|e| e.decision.client_id == 3));
        for (orig, fixed) in clean.clients[3]
            .examples
            .iter()
            .zip(&run.final_clients[3].examples)
        {
            assert_eq!(orig.label, fixed.label);
        }
        // The acknowledging client had its relevance reset in the same round.
        assert!(run
            .resets
            .iter()
            .any(|&(round, client)| client == 3 && run.swaps.iter().any(|e| e.round == round)));
    }

    #[test]
    fn label_std_is_deterministic() {
        let mlp = tiny_mlp();
        let scenario = tiny_scenario(Some(2));
        let hp = tiny_hp(8);
        let a = run_sfedavg_label_std(&scenario, &mlp, &hp, 9, |_| {}).unwrap();
        let b = run_sfedavg_label_std(&scenario, &mlp, &hp, 9, |_| {}).unwrap();
        assert_eq!(a.final_state.params, b.final_state.params);
        assert_eq!(a.swaps.len(), b.swaps.len());
        assert_eq!(a.stabilized_round, b.stabilized_round);
    }

    #[test]
    fn class_specific_run_updates_only_sampled_clients() {
        let mlp = tiny_mlp();
        let scenario = tiny_scenario(None);
        let hp = tiny_hp(5);
        let run = run_sfedavg_class_specific(&scenario, &mlp, &hp, 17, |_| {}).unwrap();
        assert_eq!(run.class_relevance.num_classes(), 3);
        assert_eq!(run.class_history.len(), 5);
        // Scope check: a class-phi entry changes in a round only if sampled.
        let mut prev: Vec<Vec<f64>> = (0..3).map(|_| vec![0.25; 4]).collect();
        for (idx, snapshot) in run.class_history.iter().enumerate() {
            let record = &run.final_state.history[idx];
            for class in 0..3 {
                for client in 0..4 {
                    if !record.sampled.contains(&client) {
                        assert_eq!(snapshot[class][client], prev[class][client]);
                    }
                }
            }
            prev = snapshot.clone();
        }
    }

    #[test]
    fn class_specific_run_requires_every_class_in_validation() {
        let mlp = tiny_mlp();
        let mut scenario = tiny_scenario(None);
        scenario.validation = scenario.validation.filter_label(0);
        let err = run_sfedavg_class_specific(&scenario, &mlp, &tiny_hp(2), 1, |_| {});
        assert!(err.is_err());
    }
}
