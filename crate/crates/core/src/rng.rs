//! Seed-derived random streams.
//!
//! Every random decision draws from a stream keyed by `(seed, purpose,
//! indices...)`, so results do not depend on thread scheduling or on how
//! many draws another component made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keep streams for unrelated decisions disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Prefix = 3,
    Negative = 4,
    Augment = 5,
    Mixup = 6,
    Cross = 7,
    Subsample = 8,
    Synthetic = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed with a purpose and a list of indices into one 64-bit key.
pub fn derive_key(seed: u64, purpose: Purpose, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA5A5_A5A5)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, purpose, indices))
}
