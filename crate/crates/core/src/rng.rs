//! Seed derivation. Every random draw in the simulator comes from a
//! `ChaCha8Rng` keyed by a base seed and a list of stream tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream tags into an independent 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, kept distinct so unrelated draws never share a sequence.
pub mod tag {
    pub const GENERATE: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT_STRUCTURAL: u64 = 4;
    pub const INIT_SEMANTIC: u64 = 5;
    pub const TEXT_TABLE: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const BATCH: u64 = 8;
    pub const PROBE: u64 = 9;
    pub const CLARITY: u64 = 10;
    pub const PROMPTS: u64 = 11;
    pub const DOMAIN: u64 = 12;
}
