//! Seeded random streams.
//!
//! Every stochastic stage draws from a ChaCha8 stream so outputs are identical
//! across platforms. Sub-streams are derived by mixing a parent seed with a
//! stream tag through SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stable tags for named streams.
pub mod tags {
    pub const SYNTH_FEATURES: u64 = 1;
    pub const SYNTH_LABELS: u64 = 2;
    pub const TEAM_WEIGHTS: u64 = 10;
    pub const TEAM_COSTS: u64 = 11;
    pub const DECISIONS: u64 = 20;
    pub const HISTORY: u64 = 30;
    pub const CAPACITY: u64 = 40;
    pub const RANDOM_ASSIGN: u64 = 50;
    pub const SUBSAMPLE: u64 = 60;
}
