//! Seeded randomness streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! experiment seed, a purpose tag and an index, so results never depend on
//! the order in which parallel workers draw.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// What a stream is used for. The discriminant becomes part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    KeyGen = 1,
    TaskData = 2,
    Encryption = 3,
    DpNoise = 4,
    Bench = 5,
}

/// Deterministic stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ index);
    rng
}

/// Derive a child seed, e.g. for one client in one round.
pub fn child_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
