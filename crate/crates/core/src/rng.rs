//! Seed derivation.
//!
//! Every stochastic routine takes an explicit `u64` seed. Child streams are
//! derived by hashing the parent seed together with integer labels, so the
//! same labels always produce the same stream regardless of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of labels into a new seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from(base: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

/// Separate generators for environment dynamics and agent decisions of one
/// episode. Keeping them apart means two agents that choose the same actions
/// also see the same slip outcomes.
pub fn episode_rngs(seed: u64, episode: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    (rng_from(seed, &[episode, 0]), rng_from(seed, &[episode, 1]))
}

/// Index drawn from a discrete distribution given a uniform variate `u` in
/// `[0, 1)`. Falls back to the last positive entry when rounding leaves the
/// cumulative sum below `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
