//! Derivation of independent sub-seeds from the single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with a path of tags (e.g. `[EPOCH, epoch, index]`).
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

// stream tags
pub const SHUFFLE: u64 = 1;
pub const AUGMENT: u64 = 2;
pub const DROPOUT: u64 = 3;
pub const SPLIT: u64 = 4;
pub const INIT: u64 = 5;
pub const SYNTH: u64 = 6;
