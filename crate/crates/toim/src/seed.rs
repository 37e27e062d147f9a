//! Deterministic sub-seed derivation.
//!
//! Parallel units (pair tasks, per-user-topic predictions) each carry their
//! own RNG seeded from the global seed plus their identity, so results do
//! not depend on scheduling or worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Mix a global seed with string components into a 64-bit sub-seed.
pub fn sub_seed(global: u64, parts: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &global.to_le_bytes());
    for p in parts {
        h = fnv1a(h, p.as_bytes());
        h = fnv1a(h, &[0xff]); // component separator
    }
    h
}

/// RNG for a derived sub-seed.
pub fn sub_rng(global: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(global, parts))
}
