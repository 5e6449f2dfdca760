//! Seed derivation shared by every randomized stage.
//!
//! All sub-seeds are pure functions of the user seed and a stable tag, so
//! results never depend on how work is scheduled across threads.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hasher = FnvHasher::default();
    hasher.write(bytes);
    hasher.finish()
}

/// Seed for work scoped to a single identity: `seed ^ fnv1a(identity_id)`.
pub fn identity_seed(seed: u64, identity_id: &str) -> u64 {
    seed ^ fnv1a(identity_id.as_bytes())
}

/// SplitMix64 finalizer; decorrelates nearby integers.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a parent seed and a small tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Seed of repetition `r` (1-based) of the label optimization.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    derive(seed, r as u64)
}

/// Clustering and pair-sampling seeds for one repetition.
pub fn stage_seeds(repetition_seed: u64) -> (u64, u64) {
    (derive(repetition_seed, 0xC1), derive(repetition_seed, 0xB2))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
