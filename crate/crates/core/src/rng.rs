//! Deterministic random streams.
//!
//! Every Monte Carlo loop in the crate draws from a stream keyed by
//! `(seed, purpose, index)`, where `index` is a sample, batch, instance or
//! grid-point index. Streams never depend on thread scheduling, so results are
//! bitwise identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes. Distinct tags keep unrelated consumers of one seed apart.
pub mod tag {
    pub const COSTS: u64 = 0x636f_7374;
    pub const PRICES: u64 = 0x7072_6963;
    pub const INSTANCES: u64 = 0x696e_7374;
    pub const BEST_RESPONSE: u64 = 0x6272_6573;
    pub const DOMINANCE: u64 = 0x646f_6d69;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(index);
    rng
}
