//! Seed derivation.
//!
//! Every random stream in the simulator is a ChaCha8 generator keyed by a
//! seed derived from a base seed and a path of integers (round, client,
//! epoch, trial, ...). Streams for different paths are independent, so the
//! order in which work is scheduled never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each element of `path` into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Stream tags, so that e.g. the partition stream and the init stream never
/// share a key even when their numeric paths coincide.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const MASK: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TRIAL: u64 = 7;
    pub const TEST: u64 = 8;
    pub const INSTANCE: u64 = 9;
}
