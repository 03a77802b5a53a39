//! Deterministic seed derivation.
//!
//! Every random draw in the crate flows through a `ChaCha8Rng` seeded from an
//! explicit `u64`. Sub-streams (per item, per epoch, per stage) are derived by
//! mixing the parent seed with fixed tags so that independent components never
//! share a stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period mixing of a 64-bit state.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a sequence of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = mix(base);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// RNG for the stream identified by `base` and `tags`.
pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
