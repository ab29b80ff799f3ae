//! Keyed random streams.
//!
//! Every stochastic step derives its generator from a master seed and a key
//! path, so results do not depend on scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a key path.
pub fn keyed_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn keyed_rng(seed: u64, key: &[u64]) -> Rng {
    Rng::seed_from_u64(keyed_seed(seed, key))
}

/// Stream tags, kept distinct so that different stages never share draws.
pub(crate) mod tag {
    pub const MARGINAL: u64 = 1;
    pub const HYPER: u64 = 2;
    pub const MAP: u64 = 3;
    pub const CHAIN: u64 = 4;
    pub const PARTICLE: u64 = 5;
    pub const LOCAL: u64 = 6;
    pub const TRUTH: u64 = 7;
    pub const GENERATE: u64 = 8;
    pub const SIMULATE: u64 = 9;
}
