//! Seeded random streams.
//!
//! Every experiment owns one `u64` seed. Independent sub-streams are derived
//! by folding a path of tags into the seed, so work split across threads
//! draws the same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SPLITS: u64 = 2;
    pub const SBM: u64 = 3;
    pub const PERMUTE: u64 = 4;
    pub const GAUSSIAN: u64 = 5;
    pub const ER: u64 = 6;
    pub const RANDOM_SCORE: u64 = 7;
    pub const THEORY: u64 = 8;
    pub const ROW_PERMUTE: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn substream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}
