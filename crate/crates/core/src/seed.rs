//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic step in the simulator (weight init, batch order, public
//! batch draws, client sampling) gets its own stream keyed by a tuple of
//! integers, so results never depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags. Kept distinct so two streams never collide.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const LOCAL_BATCH: u64 = 2;
    pub const PUBLIC_BATCH: u64 = 3;
    pub const PUBLIC_CARVE: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const DISTILL_BATCH: u64 = 7;
    pub const FINETUNE: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}
