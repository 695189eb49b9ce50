//! Deterministic seed derivation. A single run seed fans out to independent
//! per-stage and per-item streams through splitmix64 mixing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `seed` one word at a time.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed for a named pipeline stage.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name
    let tag = stage
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    derive(seed, &[tag])
}

pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

/// Uniform value in `[0, 1)` from a hash, for stateless per-item decisions.
pub fn unit(seed: u64, parts: &[u64]) -> f64 {
    (derive(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}
