//! Seed derivation. Every consumer of randomness gets its own ChaCha8
//! stream keyed by `(seed, purpose, index)`, so results never depend on
//! thread count or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    mix(seed ^ mix(purpose))
}

/// Independent stream `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Purpose tags.
pub const WORLD: u64 = 1;
pub const PROJECTION: u64 = 2;
pub const ROLLOUT: u64 = 3;
pub const DIFFICULTY: u64 = 4;
pub const BATCHES: u64 = 5;
pub const INIT: u64 = 6;
pub const FIT: u64 = 7;
pub const WARMUP: u64 = 8;
pub const DISTILL: u64 = 9;
pub const EVAL: u64 = 10;
pub const SFT_BATCHES: u64 = 11;
