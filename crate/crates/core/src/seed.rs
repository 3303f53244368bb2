//! Splittable seeds.
//!
//! Child stream `i` of master seed `s` is seeded with
//! `splitmix64(s ^ splitmix64(i + 0x9E37_79B9_7F4A_7C15))`, where `splitmix64`
//! is the standard SplitMix64 output function. Streams are consumed by
//! ChaCha8, so a `(master, path)` pair fixes every draw on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

/// Seed reached by following `path` down the stream tree.
pub fn derive_path(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(master, |s, &i| derive_seed(s, i))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    rng_from_seed(derive_path(master, path))
}
