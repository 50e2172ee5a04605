//! Seeded random streams.
//!
//! Every Monte Carlo chain, batch element and data item draws from its own
//! ChaCha stream addressed by `(seed, tag, index)`, which keeps results
//! reproducible under any scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

/// Tags keep streams used for different purposes disjoint.
pub mod tags {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const NLL: u64 = 6;
    pub const EVAL: u64 = 7;
}
