//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a stream keyed by an
//! experiment seed plus a list of tags (method id, sample index, ...).
//! Identical keys give identical sequences; distinct keys give
//! statistically independent streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent RNG from `seed` and a tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    for &t in tags {
        key = splitmix64(key ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(key)
}
