//! Counter-based randomness.
//!
//! All stochastic pieces (TSRD masks, shuffles, augmentation, init) derive
//! their streams from a base seed plus structural coordinates, so no mutable
//! RNG state needs to be carried or checkpointed and any draw can be
//! recomputed independently.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with structural coordinates into one well-scrambled word.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    state
}

/// Uniform draw in [0, 1) from a mixed word (53-bit mantissa).
pub fn unit_f64(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Full RNG for draws that need more than one word (shuffles, augmentation).
pub fn derived_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, parts))
}

/// Deterministic permutation of `0..n` for a (seed, epoch) pair.
pub fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derived_rng(seed, &[0x5u64, epoch]);
    order.shuffle(&mut rng);
    order
}
