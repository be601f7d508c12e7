//! Seeded random streams.
//!
//! Every consumer of randomness in a run gets its own ChaCha stream derived
//! from the run seed, so e.g. evaluation never perturbs the training sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream ids.
pub mod stream {
    pub const NET_INIT: u64 = 1;
    pub const ACT: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const FISHER: u64 = 4;
    pub const REHEARSAL: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const WARM_START: u64 = 7;
    pub const DATA: u64 = 8;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for `stream`, for consumers that take a plain `u64` seed.
pub fn derive(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
