//! Seeded random-number plumbing.
//!
//! Every randomized experiment in this crate is keyed by a `u64` seed plus a
//! stream label, so sweeps stay reproducible no matter how cells are ordered
//! or parallelized.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide RNG. ChaCha keeps streams stable across platforms.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a label path, e.g.
/// `derive(seed, &[g as u64, trial])`. SplitMix-style mixing keeps nearby
/// labels decorrelated.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in path {
        state = mix(state.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    state
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
