//! Seed-stream derivation.
//!
//! One master seed drives an entire experiment. Every consumer of randomness
//! gets its own ChaCha8 stream derived by hashing the tuple
//! `(master, purpose, round, unit)`, so streams never overlap and parallel
//! execution cannot perturb the sequence any consumer observes.
//!
//! Purpose tags in use:
//! - `"init"` — model parameter initialization (round 0, unit 0)
//! - `"scenario"` — scenario construction; internally forks `"kappa"` and
//!   `"server-split"` streams
//! - `"sample"` — per-round client sampling (unit 0)
//! - `"shuffle"` — per-client per-round epoch shuffling (unit = client id)
//! - `"shapley"` — per-round Monte-Carlo permutations (unit 0)
//! - `"shapley-class"` — per-round class-specific permutations (unit = class)

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the 64-bit seed for one (purpose, round, unit) stream.
pub fn derive_seed(master: u64, purpose: &str, round: u64, unit: u64) -> u64 {
    let mut h = FNV_OFFSET;
    h = fnv1a(h, &master.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    h = fnv1a(h, &round.to_le_bytes());
    h = fnv1a(h, &unit.to_le_bytes());
    splitmix64(h)
}

/// A fresh ChaCha8 stream for one (purpose, round, unit) consumer.
pub fn stream(master: u64, purpose: &str, round: u64, unit: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, round, unit))
}
