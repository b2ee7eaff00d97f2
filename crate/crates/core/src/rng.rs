//! Seed derivation for independent random streams.
//!
//! Every stochastic routine takes a `u64` seed and derives child seeds with
//! [`derive_seed`], so results depend only on (seed, stream index) and never
//! on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under purpose `tag`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream purposes passed as `tag` to [`derive_seed`].
pub mod tags {
    pub const CHAIN: u64 = 1;
    pub const PREDICT: u64 = 2;
    pub const REPLICATION: u64 = 3;
    pub const REGENERATE: u64 = 4;
    pub const FIT: u64 = 5;
}
