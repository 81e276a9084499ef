//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! user seed and a fixed stream id, so adding draws in one place never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_NOISE_DIRECTIONS: u64 = 4;
pub const STREAM_DATA: u64 = 5;
pub const STREAM_DATA_TEST: u64 = 6;
pub const STREAM_DATA_TRAIN: u64 = 7;

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
