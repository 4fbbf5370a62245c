//! Seed derivation for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Offset between the streams handed to parallel workers.
pub const STREAM_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of the `index`-th derived stream of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(STREAM_STRIDE.wrapping_mul(index.wrapping_add(1)))
}

pub fn derived_rng(master: u64, index: u64) -> SimRng {
    rng_from_seed(derive_seed(master, index))
}
