//! Deterministic seed derivation.
//!
//! Every sampler in the crate takes a seed derived from `(master seed,
//! purpose tag, indices...)` through a splitmix64 chain, so any part of a run
//! can be reproduced without serializing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Fold the parts into a single derived seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243F6A8885A308D3u64; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

/// Seeded generator for the given derivation path.
pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// Purpose tags for seed derivation paths.
pub mod tag {
    pub const SPLIT_EDGES: u64 = 1;
    pub const SPLIT_LABELS: u64 = 2;
    pub const PERTURB: u64 = 3;
    pub const NEG_SAMPLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const INFONCE: u64 = 6;
    pub const CLUB: u64 = 7;
    pub const SEMANTIC: u64 = 8;
    pub const HYPERBOLICITY: u64 = 9;
    pub const SYNTH: u64 = 10;
    pub const EVAL: u64 = 11;
    pub const PROBE: u64 = 12;
}
