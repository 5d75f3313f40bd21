//! The cooperative game over client updates: characteristic-function
//! evaluation, exact Shapley values, and Monte-Carlo permutation sampling.
//!
//! The estimators are generic over any characteristic function `v` given as
//! a closure over coalition bitmasks (bit `i` = player at index `i`), so the
//! game-theory machinery can be exercised with synthetic games that never
//! touch a neural network. [`CoalitionGame`] is the production instance: the
//! players are client updates, and `v(X)` is the validation accuracy of the
//! base model plus the unweighted mean of the updates in `X`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{ClientUpdate, EvalReport, Mlp, ParamVector};

pub type ClientId = usize;

/// Coalition as a bitmask over player indices in game order.
pub type CoalitionMask = u32;

/// Exact Shapley values are gated behind this player count.
pub const MAX_EXACT_PLAYERS: usize = 8;

/// Per-client Shapley values from one game.
#[derive(Clone, Debug)]
pub struct ShapleyResult {
    pub values: BTreeMap<ClientId, f64>,
    pub num_permutations_used: usize,
    pub exact: bool,
}

impl ShapleyResult {
    pub fn get(&self, client: ClientId) -> Option<f64> {
        self.values.get(&client).copied()
    }
}

/// Exact Shapley values via the subset-weighted form: for each player `i`,
/// sum over coalitions `C` not containing `i` of
/// `|C|! (n-|C|-1)! / n! * [v(C u {i}) - v(C)]`.
pub fn exact_shapley<F>(players: &[ClientId], v: F) -> Result<ShapleyResult>
where
    F: Fn(CoalitionMask) -> f64,
{
    let n = players.len();
    if n == 0 {
        return Err(Error::InvalidInput("game has no players".into()));
    }
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers {
            count: n,
            max: MAX_EXACT_PLAYERS,
        });
    }
    let mut factorial = vec![1.0f64; n + 1];
    for k in 1..=n {
        factorial[k] = factorial[k - 1] * k as f64;
    }
    let mut values = BTreeMap::new();
    for (i, &player) in players.iter().enumerate() {
        let bit = 1u32 << i;
        let mut total = 0.0;
        for mask in 0..(1u32 << n) {
            if mask & bit != 0 {
                continue;
            }
            let size = mask.count_ones() as usize;
            let weight = factorial[size] * factorial[n - size - 1] / factorial[n];
            total += weight * (v(mask | bit) - v(mask));
        }
        values.insert(player, total);
    }
    Ok(ShapleyResult {
        values,
        num_permutations_used: 0,
        exact: true,
    })
}

/// Draws `count` independent uniform permutations of `0..n` (Fisher-Yates,
/// with replacement across draws) from a single seeded stream.
pub(crate) fn sample_permutations(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

fn monte_carlo_over<F>(players: &[ClientId], permutations: &[Vec<usize>], v: F) -> ShapleyResult
where
    F: Fn(CoalitionMask) -> f64,
{
    let n = players.len();
    let mut sums = vec![0.0f64; n];
    for permutation in permutations {
        let mut mask: CoalitionMask = 0;
        let mut prev = v(0);
        for &idx in permutation {
            let next = mask | (1u32 << idx);
            let value = v(next);
            sums[idx] += value - prev;
            prev = value;
            mask = next;
        }
    }
    let r = permutations.len() as f64;
    let values = players
        .iter()
        .enumerate()
        .map(|(i, &player)| (player, sums[i] / r))
        .collect();
    ShapleyResult {
        values,
        num_permutations_used: permutations.len(),
        exact: false,
    }
}

/// Monte-Carlo Shapley estimate: `permutations` uniform permutations sampled
/// with replacement; each player's value is the mean of its marginal
/// contribution `v(S u {i}) - v(S)` over its predecessor sets `S`.
/// Deterministic for a fixed seed.
pub fn monte_carlo_shapley<F>(
    players: &[ClientId],
    v: F,
    permutations: usize,
    seed: u64,
) -> Result<ShapleyResult>
where
    F: Fn(CoalitionMask) -> f64,
{
    let n = players.len();
    if n == 0 {
        return Err(Error::InvalidInput("game has no players".into()));
    }
    if permutations == 0 {
        return Err(Error::InvalidInput("need at least one permutation".into()));
    }
    let perms = sample_permutations(n, permutations, seed);
    Ok(monte_carlo_over(players, &perms, v))
}

/// Options for the update game's characteristic function.
#[derive(Clone, Copy, Debug, Default)]
pub struct GameConfig {
    /// When set, v(empty) is the base model's accuracy instead of 0.
    pub empty_coalition_baseline: bool,
    /// Disables the per-coalition memo cache (values are unchanged; only
    /// cost differs). On by default.
    pub disable_cache: bool,
}

/// The cooperative game (delta, v): players are client updates on top of a
/// base parameter vector, and v(X) is the accuracy on the validation set of
/// `base + mean(updates in X)`. Immutable once constructed; coalition
/// evaluations are pure and may run from multiple threads.
pub struct CoalitionGame<'a> {
    mlp: &'a Mlp,
    base_params: &'a ParamVector,
    players: Vec<(ClientId, &'a ClientUpdate)>,
    validation: &'a Dataset,
    config: GameConfig,
    cache: Vec<OnceLock<EvalReport>>,
}

impl<'a> CoalitionGame<'a> {
    pub fn new(
        mlp: &'a Mlp,
        base_params: &'a ParamVector,
        players: Vec<(ClientId, &'a ClientUpdate)>,
        validation: &'a Dataset,
        config: GameConfig,
    ) -> Result<Self> {
        if players.is_empty() {
            return Err(Error::InvalidInput("game has no players".into()));
        }
        if players.len() > 31 {
            return Err(Error::InvalidInput(format!(
                "{} players exceed the coalition-mask width",
                players.len()
            )));
        }
        if validation.is_empty() {
            return Err(Error::EmptyDataset("validation set"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, update) in &players {
            if !seen.insert(*id) {
                return Err(Error::InvalidInput(format!("duplicate player id {id}")));
            }
            if update.len() != base_params.len() {
                return Err(Error::DimensionMismatch {
                    expected: base_params.len(),
                    actual: update.len(),
                });
            }
        }
        let cache = (0..(1usize << players.len()))
            .map(|_| OnceLock::new())
            .collect();
        Ok(Self {
            mlp,
            base_params,
            players,
            validation,
            config,
            cache,
        })
    }

    pub fn player_ids(&self) -> Vec<ClientId> {
        self.players.iter().map(|(id, _)| *id).collect()
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    fn mask_of(&self, ids: &[ClientId]) -> Result<CoalitionMask> {
        let mut mask = 0u32;
        for id in ids {
            let idx = self
                .players
                .iter()
                .position(|(pid, _)| pid == id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown player id {id}")))?;
            mask |= 1 << idx;
        }
        Ok(mask)
    }

    /// Base parameters plus the unweighted mean of the coalition's updates.
    pub fn coalition_params(&self, ids: &[ClientId]) -> Result<ParamVector> {
        if ids.is_empty() {
            return Err(Error::InvalidInput(
                "coalition_params needs a non-empty coalition".into(),
            ));
        }
        Ok(self.coalition_params_mask(self.mask_of(ids)?))
    }

    fn coalition_params_mask(&self, mask: CoalitionMask) -> ParamVector {
        debug_assert_ne!(mask, 0);
        let members: Vec<&ClientUpdate> = self
            .players
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, (_, update))| *update)
            .collect();
        let scale = 1.0 / members.len() as f64;
        let mut out = self.base_params.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let mut acc = 0.0;
            for update in &members {
                acc += update.values()[i];
            }
            *v += scale * acc;
        }
        out
    }

    fn eval_mask(&self, mask: CoalitionMask) -> EvalReport {
        let params = self.coalition_params_mask(mask);
        self.mlp
            .evaluate(&params, self.validation)
            .expect("validated at construction")
    }

    fn report(&self, mask: CoalitionMask) -> &EvalReport {
        self.cache[mask as usize].get_or_init(|| self.eval_mask(mask))
    }

    fn value_mask(&self, mask: CoalitionMask) -> f64 {
        if mask == 0 {
            return if self.config.empty_coalition_baseline {
                self.mlp
                    .evaluate(self.base_params, self.validation)
                    .expect("validated at construction")
                    .accuracy
            } else {
                0.0
            };
        }
        if self.config.disable_cache {
            self.eval_mask(mask).accuracy
        } else {
            self.report(mask).accuracy
        }
    }

    /// Per-class variant: v_c(X) is the coalition model's accuracy over the
    /// validation examples of class `class` (equivalently its recall), which
    /// is exactly the characteristic function for validation = V_c.
    fn class_value_mask(&self, mask: CoalitionMask, class: usize) -> Result<f64> {
        let recall_of = |report: &EvalReport| {
            report.recall(class).ok_or_else(|| {
                Error::InvalidInput(format!("validation set has no examples of class {class}"))
            })
        };
        if mask == 0 {
            return if self.config.empty_coalition_baseline {
                let report = self
                    .mlp
                    .evaluate(self.base_params, self.validation)
                    .expect("validated at construction");
                recall_of(&report)
            } else {
                Ok(0.0)
            };
        }
        if self.config.disable_cache {
            recall_of(&self.eval_mask(mask))
        } else {
            recall_of(self.report(mask))
        }
    }

    /// v(X): 0 for the empty coalition (unless configured otherwise), else
    /// validation accuracy of the coalition model. Memoized per mask.
    pub fn characteristic_value(&self, ids: &[ClientId]) -> Result<f64> {
        Ok(self.value_mask(self.mask_of(ids)?))
    }

    /// Evaluates all listed coalitions in parallel into the memo cache.
    fn prepare(&self, masks: &[CoalitionMask]) {
        if self.config.disable_cache {
            return;
        }
        let mut pending: Vec<CoalitionMask> = masks
            .iter()
            .copied()
            .filter(|&m| m != 0 && self.cache[m as usize].get().is_none())
            .collect();
        pending.sort_unstable();
        pending.dedup();
        pending.into_par_iter().for_each(|mask| {
            let _ = self.report(mask);
        });
    }

    fn prefix_masks(permutations: &[Vec<usize>]) -> Vec<CoalitionMask> {
        let mut masks = Vec::new();
        for permutation in permutations {
            let mut mask = 0u32;
            for &idx in permutation {
                mask |= 1 << idx;
                masks.push(mask);
            }
        }
        masks
    }

    /// Exact Shapley values of this game (player count permitting).
    pub fn exact_shapley(&self) -> Result<ShapleyResult> {
        if self.num_players() <= MAX_EXACT_PLAYERS {
            let all: Vec<CoalitionMask> = (1..(1u32 << self.num_players())).collect();
            self.prepare(&all);
        }
        exact_shapley(&self.player_ids(), |mask| self.value_mask(mask))
    }

    /// Monte-Carlo Shapley values of this game.
    pub fn monte_carlo_shapley(&self, permutations: usize, seed: u64) -> Result<ShapleyResult> {
        if permutations == 0 {
            return Err(Error::InvalidInput("need at least one permutation".into()));
        }
        let perms = sample_permutations(self.num_players(), permutations, seed);
        self.prepare(&Self::prefix_masks(&perms));
        Ok(monte_carlo_over(&self.player_ids(), &perms, |mask| {
            self.value_mask(mask)
        }))
    }

    /// Monte-Carlo Shapley values for the class-`class` game (validation
    /// restricted to one class), reusing this game's coalition evaluations.
    pub fn class_monte_carlo_shapley(
        &self,
        class: usize,
        permutations: usize,
        seed: u64,
    ) -> Result<ShapleyResult> {
        if permutations == 0 {
            return Err(Error::InvalidInput("need at least one permutation".into()));
        }
        // Fail fast when the class is absent from the validation set.
        self.class_value_mask(1, class)?;
        let perms = sample_permutations(self.num_players(), permutations, seed);
        self.prepare(&Self::prefix_masks(&perms));
        Ok(monte_carlo_over(&self.player_ids(), &perms, |mask| {
            self.class_value_mask(mask, class)
                .expect("class presence checked above")
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledExample;
    use crate::nn::{sgd_step, Minibatch, MlpArchitecture};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn ids(n: usize) -> Vec<ClientId> {
        (0..n).collect()
    }

    /// Random synthetic game: an arbitrary value per coalition, v(empty)=0.
    fn random_game(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table: Vec<f64> = (0..(1usize << n))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        table[0] = 0.0;
        table
    }

    /// Accuracy-like payoffs (the production game's range), for estimator
    /// convergence checks.
    fn accuracy_game(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table: Vec<f64> = (0..(1usize << n))
            .map(|_| rng.gen_range(0.2..0.8))
            .collect();
        table[0] = 0.0;
        table
    }

    /// Permutation-enumeration oracle: averages marginal contributions over
    /// every one of the n! player orderings (the defining formula).
    fn oracle_shapley(n: usize, v: &dyn Fn(CoalitionMask) -> f64) -> Vec<f64> {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for smaller in permutations(n - 1) {
                for pos in 0..=smaller.len() {
                    let mut p = smaller.clone();
                    p.insert(pos, n - 1);
                    out.push(p);
                }
            }
            out
        }
        let perms = permutations(n);
        let mut sums = vec![0.0; n];
        for p in &perms {
            let mut mask = 0u32;
            for &idx in p {
                let before = v(mask);
                mask |= 1 << idx;
                sums[idx] += v(mask) - before;
            }
        }
        sums.iter().map(|s| s / perms.len() as f64).collect()
    }

    #[test]
    fn additive_game_recovers_weights() {
        let weights = [1.0, 2.0, 3.0];
        let v = |mask: CoalitionMask| -> f64 {
            weights
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, w)| w)
                .sum()
        };
        let result = exact_shapley(&ids(3), v).unwrap();
        for (i, w) in weights.iter().enumerate() {
            assert_abs_diff_eq!(result.get(i).unwrap(), w, epsilon = 1e-12);
        }
        assert!(result.exact);
    }

    #[test]
    fn symmetric_game_gives_equal_values() {
        let v = |mask: CoalitionMask| mask.count_ones() as f64;
        let result = exact_shapley(&ids(2), v).unwrap();
        assert_abs_diff_eq!(result.get(0).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(result.get(1).unwrap(), 1.0, epsilon = 1e-12);

        // Size-only games make every player symmetric.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let by_size: Vec<f64> = (0..=5).map(|_| rng.gen_range(0.0..2.0)).collect();
        let v = |mask: CoalitionMask| by_size[mask.count_ones() as usize];
        let result = exact_shapley(&ids(5), v).unwrap();
        let first = result.get(0).unwrap();
        for i in 1..5 {
            assert_abs_diff_eq!(result.get(i).unwrap(), first, epsilon = 1e-12);
        }
    }

    #[test]
    fn dummy_player_gets_exactly_zero() {
        // Player 3 never changes the value of any coalition.
        let table = random_game(3, 17);
        let v = |mask: CoalitionMask| table[(mask & 0b111) as usize];
        let result = exact_shapley(&ids(4), v).unwrap();
        assert_eq!(result.get(3).unwrap(), 0.0);
    }

    #[test]
    fn exact_matches_permutation_enumeration_oracle() {
        for seed in 0..10 {
            let table = random_game(4, seed);
            let v = |mask: CoalitionMask| table[mask as usize];
            let result = exact_shapley(&ids(4), v).unwrap();
            let expected = oracle_shapley(4, &v);
            for i in 0..4 {
                assert_abs_diff_eq!(result.get(i).unwrap(), expected[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn efficiency_on_random_games() {
        for seed in 0..50 {
            let table = random_game(4, 100 + seed);
            let v = |mask: CoalitionMask| table[mask as usize];
            let result = exact_shapley(&ids(4), v).unwrap();
            let total: f64 = result.values.values().sum();
            let grand = v(0b1111) - v(0);
            assert!(
                (total - grand).abs() < 1e-9,
                "seed {seed}: {total} vs {grand}"
            );
        }
    }

    #[test]
    fn additivity_of_games() {
        for seed in 0..10 {
            let t1 = random_game(4, 200 + seed);
            let t2 = random_game(4, 300 + seed);
            let r1 = exact_shapley(&ids(4), |m| t1[m as usize]).unwrap();
            let r2 = exact_shapley(&ids(4), |m| t2[m as usize]).unwrap();
            let sum = exact_shapley(&ids(4), |m| t1[m as usize] + t2[m as usize]).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(
                    sum.get(i).unwrap(),
                    r1.get(i).unwrap() + r2.get(i).unwrap(),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn exact_guards_player_count() {
        let v = |_: CoalitionMask| 0.0;
        let err = exact_shapley(&ids(9), v).unwrap_err();
        assert!(err.to_string().contains("monte_carlo_shapley"));
    }

    #[test]
    fn monte_carlo_is_exact_on_additive_games() {
        let weights = [0.5, -1.0, 2.0, 0.25];
        let v = |mask: CoalitionMask| -> f64 {
            weights
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, w)| w)
                .sum()
        };
        for (r, seed) in [(1, 0), (7, 1), (50, 2)] {
            let result = monte_carlo_shapley(&ids(4), v, r, seed).unwrap();
            for (i, w) in weights.iter().enumerate() {
                assert_abs_diff_eq!(result.get(i).unwrap(), w, epsilon = 1e-12);
            }
            assert_eq!(result.num_permutations_used, r);
            assert!(!result.exact);
        }
    }

    #[test]
    fn monte_carlo_converges_to_exact() {
        let table = accuracy_game(4, 7);
        let v = |mask: CoalitionMask| table[mask as usize];
        let exact = exact_shapley(&ids(4), v).unwrap();
        for seed in 0..10 {
            let mc = monte_carlo_shapley(&ids(4), v, 2000, seed).unwrap();
            for i in 0..4 {
                assert!(
                    (mc.get(i).unwrap() - exact.get(i).unwrap()).abs() < 0.02,
                    "seed {seed} player {i}"
                );
            }
        }
    }

    #[test]
    fn estimator_error_shrinks_with_more_permutations() {
        let table = accuracy_game(4, 11);
        let v = |mask: CoalitionMask| table[mask as usize];
        let exact = exact_shapley(&ids(4), v).unwrap();
        let mae = |r: usize, seed: u64| -> f64 {
            let mc = monte_carlo_shapley(&ids(4), v, r, seed).unwrap();
            (0..4)
                .map(|i| (mc.get(i).unwrap() - exact.get(i).unwrap()).abs())
                .sum::<f64>()
                / 4.0
        };
        let coarse: f64 = (0..10).map(|s| mae(20, s)).sum::<f64>() / 10.0;
        let fine: f64 = (0..10).map(|s| mae(2000, s)).sum::<f64>() / 10.0;
        assert!(fine < coarse, "MAE(R=2000)={fine} vs MAE(R=20)={coarse}");
    }

    #[test]
    fn monte_carlo_is_deterministic_per_seed() {
        let table = random_game(5, 23);
        let v = |mask: CoalitionMask| table[mask as usize];
        let a = monte_carlo_shapley(&ids(5), v, 10, 99).unwrap();
        let b = monte_carlo_shapley(&ids(5), v, 10, 99).unwrap();
        assert_eq!(a.values, b.values);
    }

    // --- CoalitionGame over a real (tiny) network ---

    fn tiny_setup() -> (Mlp, ParamVector, Dataset) {
        let mlp = Mlp::new(MlpArchitecture::new(4, vec![6, 5], 3).unwrap());
        let base = mlp.init_params(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let examples: Vec<LabeledExample> = (0..20)
            .map(|i| {
                let label = (i % 3) as u8;
                let pixels: Vec<f64> = (0..4)
                    .map(|p| {
                        let bias = if p == label as usize { 0.8 } else { 0.1 };
                        bias + 0.05 * rng.gen::<f64>()
                    })
                    .collect();
                LabeledExample {
                    pixels: pixels.into(),
                    label,
                }
            })
            .collect();
        (mlp, base, Dataset::new(examples))
    }

    /// A delta that actually improves the base model on the given data.
    fn useful_update(mlp: &Mlp, base: &ParamVector, data: &Dataset) -> ClientUpdate {
        let mut local = base.clone();
        for _ in 0..60 {
            let batch = Minibatch::new(&data.examples).unwrap();
            let (_, grad) = mlp.loss_and_grad(&local, &batch);
            local = sgd_step(local, &grad, 0.3);
        }
        local.sub(base)
    }

    #[test]
    fn coalition_params_and_values() {
        let (mlp, base, validation) = tiny_setup();
        let zero = ParamVector::zeros(base.len());
        let delta = useful_update(&mlp, &base, &validation);
        let neg = ParamVector::zeros(base.len()).sub(&delta);
        let game = CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &delta), (1, &neg), (2, &zero)],
            &validation,
            GameConfig::default(),
        )
        .unwrap();

        // Single member: base + delta.
        let single = game.coalition_params(&[0]).unwrap();
        for (i, v) in single.values().iter().enumerate() {
            assert_abs_diff_eq!(*v, base.values()[i] + delta.values()[i], epsilon = 1e-12);
        }
        // Cancelling updates: back to base.
        let cancelled = game.coalition_params(&[0, 1]).unwrap();
        for (i, v) in cancelled.values().iter().enumerate() {
            assert_abs_diff_eq!(*v, base.values()[i], epsilon = 1e-12);
        }
        // Zero update: exactly base accuracy.
        let base_acc = mlp.evaluate(&base, &validation).unwrap().accuracy;
        assert_eq!(game.characteristic_value(&[2]).unwrap(), base_acc);
        // Empty coalition convention.
        assert_eq!(game.characteristic_value(&[]).unwrap(), 0.0);
        assert!(game.coalition_params(&[]).is_err());
    }

    #[test]
    fn two_player_game_matches_direct_evaluation() {
        let (mlp, base, validation) = tiny_setup();
        let delta = useful_update(&mlp, &base, &validation);
        let half: ClientUpdate =
            ParamVector::from_vec(delta.values().iter().map(|v| 0.5 * v).collect());
        let game = CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &delta), (1, &half)],
            &validation,
            GameConfig::default(),
        )
        .unwrap();
        let result = game.exact_shapley().unwrap();

        // Direct evaluation: v of each coalition computed by hand, then the
        // two-player Shapley formula.
        let acc = |params: &ParamVector| mlp.evaluate(params, &validation).unwrap().accuracy;
        let add = |scale: f64, updates: &[&ClientUpdate]| {
            let mut p = base.clone();
            for (i, v) in p.values_mut().iter_mut().enumerate() {
                let mut s = 0.0;
                for u in updates {
                    s += u.values()[i];
                }
                *v += scale * s;
            }
            p
        };
        let v_a = acc(&add(1.0, &[&delta]));
        let v_b = acc(&add(1.0, &[&half]));
        let v_ab = acc(&add(0.5, &[&delta, &half]));
        let sv_a = 0.5 * (v_a - 0.0) + 0.5 * (v_ab - v_b);
        let sv_b = 0.5 * (v_b - 0.0) + 0.5 * (v_ab - v_a);
        assert_abs_diff_eq!(result.get(0).unwrap(), sv_a, epsilon = 1e-12);
        assert_abs_diff_eq!(result.get(1).unwrap(), sv_b, epsilon = 1e-12);
    }

    #[test]
    fn negated_useful_update_scores_negative() {
        let (mlp, base, validation) = tiny_setup();
        let delta = useful_update(&mlp, &base, &validation);
        let neg = ParamVector::zeros(base.len()).sub(&delta);
        let game = CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &delta), (1, &neg)],
            &validation,
            GameConfig::default(),
        )
        .unwrap();
        let result = game.exact_shapley().unwrap();
        assert!(
            result.get(1).unwrap() < 0.0,
            "negated update should have negative value, got {:?}",
            result.values
        );
    }

    #[test]
    fn cache_never_changes_values() {
        let (mlp, base, validation) = tiny_setup();
        let delta = useful_update(&mlp, &base, &validation);
        let zero = ParamVector::zeros(base.len());
        let players = vec![(0, &delta), (1, &zero), (2, &delta)];
        let cached = CoalitionGame::new(
            &mlp,
            &base,
            players.clone(),
            &validation,
            GameConfig::default(),
        )
        .unwrap();
        let uncached = CoalitionGame::new(
            &mlp,
            &base,
            players,
            &validation,
            GameConfig {
                disable_cache: true,
                ..GameConfig::default()
            },
        )
        .unwrap();
        let a = cached.monte_carlo_shapley(12, 5).unwrap();
        let b = uncached.monte_carlo_shapley(12, 5).unwrap();
        assert_eq!(a.values, b.values);
        let ea = cached.exact_shapley().unwrap();
        let eb = uncached.exact_shapley().unwrap();
        assert_eq!(ea.values, eb.values);
    }

    #[test]
    fn empty_coalition_baseline_flag() {
        let (mlp, base, validation) = tiny_setup();
        let zero = ParamVector::zeros(base.len());
        let game = CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &zero)],
            &validation,
            GameConfig {
                empty_coalition_baseline: true,
                ..GameConfig::default()
            },
        )
        .unwrap();
        let base_acc = mlp.evaluate(&base, &validation).unwrap().accuracy;
        assert_eq!(game.characteristic_value(&[]).unwrap(), base_acc);
        // With a zero update and baseline empty value, the single player's
        // marginal contribution is exactly zero.
        let result = game.exact_shapley().unwrap();
        assert_eq!(result.get(0).unwrap(), 0.0);
    }

    #[test]
    fn game_construction_validates_inputs() {
        let (mlp, base, validation) = tiny_setup();
        let zero = ParamVector::zeros(base.len());
        let short = ParamVector::zeros(3);
        assert!(
            CoalitionGame::new(&mlp, &base, vec![], &validation, GameConfig::default()).is_err()
        );
        assert!(CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &zero), (0, &zero)],
            &validation,
            GameConfig::default()
        )
        .is_err());
        assert!(CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &short)],
            &validation,
            GameConfig::default()
        )
        .is_err());
        assert!(CoalitionGame::new(
            &mlp,
            &base,
            vec![(0, &zero)],
            &Dataset::default(),
            GameConfig::default()
        )
        .is_err());
    }
}
