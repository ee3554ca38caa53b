//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is a pure
//! function of a master seed and a small tuple of integers (worker id, iteration,
//! sequence id, ...). Streams never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one 64-bit seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(master), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_from(master: u64, parts: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

/// Stream tags keep unrelated consumers of the same master seed apart.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const INPUT: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const SCHEDULE: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const ANALYSIS: u64 = 6;
}
