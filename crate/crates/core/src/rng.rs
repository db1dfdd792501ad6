//! Seed derivation for independent, schedule-free random streams.
//!
//! Every stochastic consumer (episode sampling, a rollout group, an evaluation
//! episode) gets its own generator keyed by a tuple of integers, so results do
//! not depend on the order in which work is executed or on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a domain tag and an arbitrary key path.
pub fn derive_seed(seed: u64, tag: &str, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    h
}

pub fn stream(seed: u64, tag: &str, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, keys))
}
