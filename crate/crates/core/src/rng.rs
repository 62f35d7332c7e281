//! Deterministic RNG substreams.
//!
//! All randomness in a run flows from a single `u64` seed. Independent
//! consumers (data generation, augmentation, init, training shuffles) derive
//! named substreams so adding a consumer never perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a deterministic RNG for `(seed, name)`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the name, folded with the run seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&seed.rotate_left(17).to_le_bytes());
    key[24..32].copy_from_slice(&h.rotate_left(31).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Substream further indexed by an integer (per-clip, per-epoch, ...).
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    substream(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15), name)
}
