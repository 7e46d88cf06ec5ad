//! Seeded random streams.
//!
//! A single 64-bit seed governs every stochastic step. Each purpose
//! (subsampling, weight init, dropout, shuffling, per-field generation, ...)
//! gets its own independent stream derived from the master seed, so adding
//! draws to one step never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a purpose tag and an index into the master seed.
///
/// splitmix64 finalizer over (seed, fnv(tag), index); stable across
/// platforms and releases.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in purpose.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Independent stream for one (purpose, index) pair.
pub fn stream(master: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, index))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
