//! Seed derivation for deterministic, schedule-independent random streams.
//!
//! Every source of randomness in the crate is a ChaCha stream derived from
//! a base seed plus a structured tag, so results do not depend on thread
//! scheduling or process-level hash randomization.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used for stable tag hashing (std's hasher is randomized per run).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// An independent RNG for `(seed, tag)`.
pub fn derive_rng(seed: u64, tag: &[u8]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(tag));
    rng
}

/// A derived sub-seed for `(seed, tag)`, for configs that carry their own seed.
pub fn derive_seed(seed: u64, tag: &[u8]) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(tag);
    fnv1a64(&buf)
}

/// Stable tag for a `(label, node set, timestamp)` query.
pub fn query_tag(label: &str, nodes: &[u32], t: u32) -> Vec<u8> {
    let mut buf = Vec::with_capacity(label.len() + 4 * nodes.len() + 5);
    buf.extend_from_slice(label.as_bytes());
    buf.push(0);
    for &n in nodes {
        buf.extend_from_slice(&n.to_le_bytes());
    }
    buf.extend_from_slice(&t.to_le_bytes());
    buf
}
