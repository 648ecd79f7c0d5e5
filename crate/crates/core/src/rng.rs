//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived from `(base seed, purpose tag, index...)`, so results never depend on
//! the order in which independent streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes. Distinct tags give statistically independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Branch1Init = 1,
    Branch2Init = 2,
    Shuffle = 3,
    Physics = 4,
    Validation = 5,
    SynthNoise = 6,
    SynthProfile = 7,
    CycleSeed = 8,
    GradCheck = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and a list of indices.
pub fn derive_seed(base: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x1234_5678)));
    }
    h
}

pub fn stream(base: u64, stream: Stream, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, indices))
}
