//! Deterministic seed derivation.
//!
//! Every random stream in a run is a `ChaCha8Rng` seeded from a 64-bit value
//! derived from the run's master seed. Derivations use the SplitMix64
//! finalizer so that nearby inputs give unrelated outputs:
//!
//! ```text
//! mix(x)                  = splitmix64(x)
//! derive(seed, tag, idx)  = mix(mix(seed ^ mix(tag)) + idx * GOLDEN)
//! repetition_seed(m, i)   = derive(m, TAG_REPETITION, i)
//! ```
//!
//! A stream depends only on `(seed, tag, idx)`, so adding devices, channels
//! or repetitions never changes the streams that already existed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags. Values are part of the replay contract; do not renumber.
pub const TAG_REPETITION: u64 = 1;
pub const TAG_TRAFFIC_CHANNEL: u64 = 2;
pub const TAG_DEVICE_POLICY: u64 = 3;
pub const TAG_DEVICE_PHASE: u64 = 4;
pub const TAG_MU_ESTIMATE: u64 = 5;

/// SplitMix64 output function applied to `x + GOLDEN`.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(tag)).wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Seed of repetition `index` (0-based) under `master_seed`.
pub fn repetition_seed(master_seed: u64, index: u64) -> u64 {
    derive(master_seed, TAG_REPETITION, index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
