//! Deterministic random streams keyed by integer coordinates.
//!
//! Every `(seed, a, b)` triple gets its own generator, so work can be split
//! across any number of threads without changing the numbers drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.rotate_left(17))
}

pub fn stream(seed: u64, a: u64, b: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(seed, a, b))
}
