//! Deterministic stream derivation.
//!
//! Every random draw in the engine comes from a stream derived from the run
//! seed plus a list of integer tags (purpose, epoch, pedestrian, frame, ...).
//! Streams are independent ChaCha12 generators keyed by a SplitMix64 hash of
//! the tag path, so work can be reordered or parallelized across pedestrians
//! and frames without changing any draw.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream purposes. Tag paths start with one of these.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const GNN_NOISE: u64 = 2;
    pub const DIFFUSION_STEP: u64 = 3;
    pub const SAMPLER: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const SCENARIO: u64 = 6;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent generator from `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut state = splitmix64(seed ^ 0xC0FF_EE00_DEAD_BEEF);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t.wrapping_add(0x1234_5678_9ABC_DEF0)));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
