//! Seeded random streams.
//!
//! Every consumer of randomness owns a [`ChaCha8Rng`] derived from the run seed and a
//! fixed stream id, so adding a consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_ADVERSARY_INIT: u64 = 1;
pub const STREAM_MIMIC_INIT: u64 = 2;
pub const STREAM_MINIBATCH: u64 = 3;
pub const STREAM_MIMIC_SAMPLING: u64 = 4;
pub const STREAM_BUFFER: u64 = 5;
pub const STREAM_ENTROPY_SAMPLE: u64 = 6;
pub const STREAM_VICTIM_INIT: u64 = 7;
pub const STREAM_EVAL: u64 = 8;
/// Collector `i` uses `STREAM_COLLECTOR_BASE + i`.
pub const STREAM_COLLECTOR_BASE: u64 = 1 << 16;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; used to derive per-episode seeds from `(seed, index)`.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
