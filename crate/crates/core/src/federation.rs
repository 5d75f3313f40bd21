//! The server round loop: relevance-weighted client sampling, local SGD,
//! Monte-Carlo Shapley scoring, relevance updates, and aggregation — both
//! plain FedAvg and S-FedAvg.
//!
//! A round is a pure function of the previous [`RoundState`]: sampled
//! clients train locally (in parallel) starting from the current global
//! parameters, the server scores the returned updates with the cooperative
//! game over the validation set, folds the Shapley values into the
//! relevance vector (`phi_s <- alpha * phi_s + beta * sv(s)` for sampled
//! clients only), and applies the unweighted mean of the updates to the
//! global model.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, ScenarioSplit};
use crate::error::{Error, Result};
use crate::frcs::SignalPolicy;
use crate::nn::{sgd_step, ClientUpdate, Minibatch, Mlp, ParamVector};
use crate::seeds;
use crate::shapley::{ClientId, CoalitionGame, GameConfig, ShapleyResult};

fn default_num_clients() -> usize {
    10
}
fn default_clients_per_round() -> usize {
    5
}
fn default_batch_size() -> usize {
    32
}
fn default_local_epochs() -> usize {
    5
}
fn default_rounds() -> usize {
    100
}
fn default_mc_permutations() -> usize {
    10
}
fn default_alpha() -> f64 {
    0.75
}
fn default_beta() -> f64 {
    0.25
}
fn default_client_lr() -> f64 {
    0.01
}
fn default_lr_decay_factor() -> f64 {
    0.995
}
fn default_lr_decay_every() -> usize {
    20
}
fn default_lambda() -> f64 {
    2.0
}
fn default_zeta() -> usize {
    5
}
fn default_gamma() -> f64 {
    0.95
}

/// Experiment hyper-parameters. Defaults are the reference values:
/// K=10, m=5, B=32, E=5, T=100, R=10, alpha=0.75, beta=0.25, eta_k=0.01,
/// decay 0.995 every 20 rounds, lambda=2 percentage points, zeta=5.
/// `gamma` is recorded for config fidelity but used by nothing.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    /// K: total number of clients.
    #[serde(default = "default_num_clients")]
    pub num_clients: usize,
    /// m: clients sampled per round.
    #[serde(default = "default_clients_per_round")]
    pub clients_per_round: usize,
    /// B: minibatch size for local SGD.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// E: local epochs per round.
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    /// T: communication rounds.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// R: Monte-Carlo permutations per Shapley estimate.
    #[serde(default = "default_mc_permutations")]
    pub mc_permutations: usize,
    /// Weight on a client's past relevance in the update rule.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Weight on the fresh Shapley value in the update rule.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// eta_k: local learning rate (equal across clients).
    #[serde(default = "default_client_lr")]
    pub client_lr: f64,
    #[serde(default = "default_lr_decay_factor")]
    pub lr_decay_factor: f64,
    /// Decay is applied after every this-many rounds.
    #[serde(default = "default_lr_decay_every")]
    pub lr_decay_every: usize,
    /// lambda: stabilization fluctuation bound, in accuracy percentage points.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// zeta: stabilization window length, in rounds.
    #[serde(default = "default_zeta")]
    pub zeta: usize,
    /// Recorded for fidelity with the reference hyper-parameter list; unused.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight client updates by local dataset size during aggregation
    /// (comparison flag; the reference update rule is the unweighted mean).
    #[serde(default)]
    pub weighted_aggregation: bool,
    /// Use the base model's accuracy for v(empty) instead of 0.
    #[serde(default)]
    pub empty_coalition_baseline: bool,
    /// Which clients get the label-standardization signal.
    #[serde(default)]
    pub signal_policy: SignalPolicy,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            num_clients: default_num_clients(),
            clients_per_round: default_clients_per_round(),
            batch_size: default_batch_size(),
            local_epochs: default_local_epochs(),
            rounds: default_rounds(),
            mc_permutations: default_mc_permutations(),
            alpha: default_alpha(),
            beta: default_beta(),
            client_lr: default_client_lr(),
            lr_decay_factor: default_lr_decay_factor(),
            lr_decay_every: default_lr_decay_every(),
            lambda: default_lambda(),
            zeta: default_zeta(),
            gamma: default_gamma(),
            weighted_aggregation: false,
            empty_coalition_baseline: false,
            signal_policy: SignalPolicy::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidInput("num_clients must be positive".into()));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::InvalidInput(format!(
                "clients_per_round must be in 1..={}, got {}",
                self.num_clients, self.clients_per_round
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidInput("rounds must be positive".into()));
        }
        if self.mc_permutations == 0 {
            return Err(Error::InvalidInput(
                "mc_permutations must be positive".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidInput(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.client_lr <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "client_lr must be positive, got {}",
                self.client_lr
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidInput(
                "lr_decay_every must be positive".into(),
            ));
        }
        if self.zeta == 0 {
            return Err(Error::InvalidInput("zeta must be positive".into()));
        }
        Ok(())
    }
}

/// Server-private per-client relevance scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceVector {
    phi: Vec<f64>,
}

impl RelevanceVector {
    /// Uniform initialization: 1/K per client.
    pub fn uniform(num_clients: usize) -> Self {
        assert!(num_clients > 0, "need at least one client");
        Self {
            phi: vec![1.0 / num_clients as f64; num_clients],
        }
    }

    pub fn from_vec(phi: Vec<f64>) -> Self {
        assert!(phi.iter().all(|v| v.is_finite()), "phi must be finite");
        Self { phi }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn get(&self, client: ClientId) -> f64 {
        self.phi[client]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.phi
    }

    pub fn mean(&self) -> f64 {
        self.phi.iter().sum::<f64>() / self.phi.len() as f64
    }

    /// Softmax over the full vector (max-subtracted).
    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.phi)
    }
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Samples `m` distinct clients: each draw picks from the softmax over the
/// remaining clients' relevance scores, renormalized after every removal.
/// Deterministic for a fixed seed.
pub fn sample_clients(phi: &RelevanceVector, m: usize, seed: u64) -> BTreeSet<ClientId> {
    let k = phi.len();
    assert!(m >= 1 && m <= k, "m must lie in 1..={k}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<ClientId> = (0..k).collect();
    let mut sampled = BTreeSet::new();
    for _ in 0..m {
        let weights = softmax(&remaining.iter().map(|&c| phi.get(c)).collect::<Vec<f64>>());
        let draw: f64 = rng.gen();
        let mut cumulative = 0.0;
        let mut chosen = remaining.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            cumulative += w;
            if draw < cumulative {
                chosen = i;
                break;
            }
        }
        sampled.insert(remaining.remove(chosen));
    }
    sampled
}

/// Local training: initialize at the global parameters, take `epochs` SGD
/// steps — each on a fresh uniformly-drawn minibatch of `batch_size`
/// examples (the whole shard when it is smaller) — and return the parameter
/// delta. Keeping each client's per-round movement to a handful of steps is
/// what lets the server's averaged model evolve smoothly under non-IID
/// shards.
pub fn client_local_train(
    client: &ClientDataset,
    mlp: &Mlp,
    global_params: &ParamVector,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> ClientUpdate {
    assert!(batch_size >= 1, "batch size must be positive");
    use rand::seq::SliceRandom;
    let mut local = global_params.clone();
    let mut order = client.examples.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let take = batch_size.min(order.len());
        let batch = Minibatch::new(&order[..take]).expect("shards are non-empty");
        let (_, grad) = mlp.loss_and_grad(&local, &batch);
        local = sgd_step(local, &grad, lr);
    }
    local.sub(global_params)
}

/// Server aggregation: the unweighted mean of the updates applied to the
/// current parameters.
pub fn aggregate(params: &ParamVector, updates: &[&ClientUpdate]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::InvalidInput("no updates to aggregate".into()));
    }
    for update in updates {
        if update.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: update.len(),
            });
        }
    }
    let scale = 1.0 / updates.len() as f64;
    let mut out = params.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        let mut acc = 0.0;
        for update in updates {
            acc += update.values()[i];
        }
        *v += scale * acc;
    }
    Ok(out)
}

/// Dataset-size-weighted aggregation (comparison flag only).
pub fn aggregate_weighted(
    params: &ParamVector,
    updates: &[(&ClientUpdate, usize)],
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::InvalidInput("no updates to aggregate".into()));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidInput("all update weights are zero".into()));
    }
    for (update, _) in updates {
        if update.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: update.len(),
            });
        }
    }
    let mut out = params.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        let mut acc = 0.0;
        for (update, n) in updates {
            acc += update.values()[i] * (*n as f64);
        }
        *v += acc / total as f64;
    }
    Ok(out)
}

/// Relevance update: sampled clients get `alpha * phi + beta * sv`, everyone
/// else keeps their entry bit-identically.
pub fn update_relevance(
    phi: &RelevanceVector,
    sv: &ShapleyResult,
    alpha: f64,
    beta: f64,
    sampled: &BTreeSet<ClientId>,
) -> Result<RelevanceVector> {
    let mut out = phi.phi.clone();
    for &client in sampled {
        let value = sv
            .get(client)
            .ok_or(Error::MissingShapleyValue { client })?;
        out[client] = alpha * out[client] + beta * value;
    }
    Ok(RelevanceVector { phi: out })
}

/// Everything recorded about one round.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub sampled: BTreeSet<ClientId>,
    /// Present for S-FedAvg rounds, absent for FedAvg.
    pub shapley: Option<ShapleyResult>,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    /// phi after this round's relevance update.
    pub phi_snapshot: Vec<f64>,
}

/// The server's evolving state across rounds.
#[derive(Clone, Debug)]
pub struct RoundState {
    pub master_seed: u64,
    /// Rounds completed so far (t).
    pub round_index: usize,
    pub params: ParamVector,
    pub phi: RelevanceVector,
    pub client_lr: f64,
    pub history: Vec<RoundRecord>,
}

impl RoundState {
    /// Fresh state: uniform relevance, seeded model initialization, t = 0.
    pub fn new(mlp: &Mlp, hp: &HyperParams, master_seed: u64) -> Self {
        Self {
            master_seed,
            round_index: 0,
            params: mlp.init_params(seeds::derive_seed(master_seed, "init", 0, 0)),
            phi: RelevanceVector::uniform(hp.num_clients),
            client_lr: hp.client_lr,
            history: Vec::new(),
        }
    }
}

/// Trains all sampled clients in parallel; results come back ordered by
/// client id, so downstream float accumulation is schedule-independent.
pub(crate) fn train_sampled(
    sampled: &BTreeSet<ClientId>,
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    state: &RoundState,
    hp: &HyperParams,
    round: usize,
) -> Vec<(ClientId, ClientUpdate)> {
    let ids: Vec<ClientId> = sampled.iter().copied().collect();
    ids.into_par_iter()
        .map(|client_id| {
            let update = client_local_train(
                &scenario.clients[client_id],
                mlp,
                &state.params,
                state.client_lr,
                hp.local_epochs,
                hp.batch_size,
                seeds::derive_seed(state.master_seed, "shuffle", round as u64, client_id as u64),
            );
            (client_id, update)
        })
        .collect()
}

/// Aggregation + evaluation + decay + bookkeeping shared by every round
/// variant. `phi_new` is the relevance vector after this round's update.
pub(crate) fn finish_round(
    mut state: RoundState,
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
    round: usize,
    sampled: BTreeSet<ClientId>,
    updates: &[(ClientId, ClientUpdate)],
    shapley: Option<ShapleyResult>,
    phi_new: RelevanceVector,
) -> Result<RoundState> {
    let next_params = if hp.weighted_aggregation {
        let weighted: Vec<(&ClientUpdate, usize)> = updates
            .iter()
            .map(|(id, u)| (u, scenario.clients[*id].len()))
            .collect();
        aggregate_weighted(&state.params, &weighted)?
    } else {
        let refs: Vec<&ClientUpdate> = updates.iter().map(|(_, u)| u).collect();
        aggregate(&state.params, &refs)?
    };
    if !next_params.all_finite() {
        return Err(Error::NonFiniteParams { round });
    }
    let validation_accuracy = mlp.evaluate(&next_params, &scenario.validation)?.accuracy;
    let test_accuracy = mlp.evaluate(&next_params, &scenario.test)?.accuracy;

    state.history.push(RoundRecord {
        round,
        sampled,
        shapley,
        validation_accuracy,
        test_accuracy,
        phi_snapshot: phi_new.as_slice().to_vec(),
    });
    state.params = next_params;
    state.phi = phi_new;
    state.round_index = round;
    if round % hp.lr_decay_every == 0 {
        state.client_lr *= hp.lr_decay_factor;
    }
    Ok(state)
}

/// One S-FedAvg round: softmax sampling from phi, local training, Monte-Carlo
/// Shapley over the updates, relevance update, aggregation, decay.
pub fn run_round_sfedavg(
    state: RoundState,
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
) -> Result<RoundState> {
    let round = state.round_index + 1;
    let sampled = sample_clients(
        &state.phi,
        hp.clients_per_round,
        seeds::derive_seed(state.master_seed, "sample", round as u64, 0),
    );
    let updates = train_sampled(&sampled, scenario, mlp, &state, hp, round);

    let players: Vec<(ClientId, &ClientUpdate)> = updates.iter().map(|(id, u)| (*id, u)).collect();
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
        seeds::derive_seed(state.master_seed, "shapley", round as u64, 0),
    )?;
    drop(game);

    let phi_new = update_relevance(&state.phi, &sv, hp.alpha, hp.beta, &sampled)?;
    finish_round(
        state,
        scenario,
        mlp,
        hp,
        round,
        sampled,
        &updates,
        Some(sv),
        phi_new,
    )
}

/// One FedAvg round: uniform sampling, no Shapley, phi untouched.
pub fn run_round_fedavg(
    state: RoundState,
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
) -> Result<RoundState> {
    let round = state.round_index + 1;
    let uniform = RelevanceVector::uniform(hp.num_clients);
    let sampled = sample_clients(
        &uniform,
        hp.clients_per_round,
        seeds::derive_seed(state.master_seed, "sample", round as u64, 0),
    );
    let updates = train_sampled(&sampled, scenario, mlp, &state, hp, round);
    let phi_unchanged = state.phi.clone();
    finish_round(
        state,
        scenario,
        mlp,
        hp,
        round,
        sampled,
        &updates,
        None,
        phi_unchanged,
    )
}

/// Runs T rounds of S-FedAvg. The observer sees each round's record as it
/// completes.
pub fn run_sfedavg(
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
    master_seed: u64,
    mut observer: impl FnMut(&RoundRecord),
) -> Result<RoundState> {
    hp.validate()?;
    let mut state = RoundState::new(mlp, hp, master_seed);
    for _ in 0..hp.rounds {
        state = run_round_sfedavg(state, scenario, mlp, hp)?;
        observer(state.history.last().unwrap());
    }
    Ok(state)
}

/// Runs T rounds of FedAvg.
pub fn run_fedavg(
    scenario: &ScenarioSplit,
    mlp: &Mlp,
    hp: &HyperParams,
    master_seed: u64,
    mut observer: impl FnMut(&RoundRecord),
) -> Result<RoundState> {
    hp.validate()?;
    let mut state = RoundState::new(mlp, hp, master_seed);
    for _ in 0..hp.rounds {
        state = run_round_fedavg(state, scenario, mlp, hp)?;
        observer(state.history.last().unwrap());
    }
    Ok(state)
}
