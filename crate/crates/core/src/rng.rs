//! Seeding conventions shared by the generator, sampler and fold splitter.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value. Child seeds are derived with the SplitMix64 finalizer:
//!
//! ```text
//! child(seed, i) = mix(seed + (i + 1) * 0x9E3779B97F4A7C15)
//! mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)
//! ```
//! (all arithmetic wrapping, mod 2^64).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Identifier recorded in dataset manifests.
pub const RNG_ID: &str = "chacha8/splitmix64-child";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent named sub-stream, so unrelated consumers of one seed never share draws.
pub fn substream(seed: u64, tag: &str) -> Stream {
    let h = tag
        .bytes()
        .fold(seed, |acc, b| splitmix64(acc ^ u64::from(b)));
    stream(h)
}
