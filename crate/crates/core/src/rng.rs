//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream (a counter-based
//! generator) whose 64-bit seed is derived from a master seed and a path of
//! indices:
//!
//! ```text
//! h_0 = splitmix64(master)
//! h_k = splitmix64(h_{k-1} ^ splitmix64(index_k + k))
//! ```
//!
//! A trial's stream therefore depends only on its own index path, never on
//! scheduling order or on how many other trials run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an index path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for (k, &idx) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(idx.wrapping_add(k as u64 + 1)));
    }
    h
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sub-stream tags so positions and velocities of one trial never share draws.
pub const POSITIONS: u64 = 0x504f_5349;
pub const VELOCITIES: u64 = 0x5645_4c4f;
