//! Seeded random streams.
//!
//! Every stochastic component takes a [`ChaCha8Rng`]. Independent runs get
//! their own ChaCha stream id so that results depend only on the seed and the
//! role of the stream, never on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved for the different consumers of one seed.
pub mod role {
    pub const TRAIN: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const INIT: u64 = 3;
    pub const STEP_SEARCH: u64 = 4;
    pub const STEP_SEARCH_EVAL: u64 = 5;
}

/// A generator for `seed` on stream `stream`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A generator whose stream id is a hash of `role` and `key`, used when runs
/// are keyed by a value (e.g. a step size) rather than a position.
pub fn keyed_stream(seed: u64, role: u64, key: u64) -> StreamRng {
    // splitmix64 finalizer
    let mut x = role.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ key;
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    stream(seed, x)
}
