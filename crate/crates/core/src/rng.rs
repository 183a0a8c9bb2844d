//! Keyed random streams.
//!
//! Every replicate draws from its own ChaCha8 stream selected by
//! `(seed, stream)`, so results do not depend on evaluation order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed (SplitMix64 finalizer over the pair).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
