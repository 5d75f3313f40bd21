//! Deterministic federated-learning simulator with Shapley-value-based
//! relevant-client selection.
//!
//! The crate models one server and `K` clients training a small MLP on the
//! even-digit MNIST task. Clients share parameter deltas, never data. Each
//! round the server scores the sampled clients by treating their updates as
//! players of a cooperative game whose characteristic function is validation
//! accuracy, estimates Shapley values by Monte-Carlo permutation sampling,
//! and folds them into a per-client relevance vector that biases future
//! client sampling (S-FedAvg). Two applications build on that machinery:
//! class-specific client valuation and data-label standardization for
//! clients with permuted labels.
//!
//! Modules:
//! - [`data`]: MNIST IDX loading, the even-digit task, 1-class-non-IID
//!   partitioning, open-set label noise, scenario construction.
//! - [`nn`]: the numeric engine — a plain-SGD MLP with exact backprop in f64.
//! - [`checkpoint`]: flat parameter-vector checkpoint files.
//! - [`shapley`]: exact and Monte-Carlo Shapley values over client updates.
//! - [`federation`]: the round loop for FedAvg and S-FedAvg.
//! - [`frcs`]: class-specific relevance and S-FedAvg-Label-Std.
//! - [`seeds`]: the master-seed stream-derivation scheme.
//!
//! Every run is a pure function of (master seed, data, hyperparameters):
//! client training jobs and coalition evaluations may execute in parallel,
//! but no output ever depends on the schedule.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod federation;
pub mod frcs;
pub mod nn;
pub mod seeds;
pub mod shapley;

pub use error::{Error, Result};
