//! Deterministic RNG stream derivation.
//!
//! Every stochastic component draws from a ChaCha stream derived from a
//! root seed plus a fixed label and index, so parallel and sequential
//! execution (and resumed runs) see identical draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent stream from (seed, label, index).
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let lb = label.as_bytes();
    // fold the label into the remaining key bytes
    for (i, b) in lb.iter().enumerate() {
        key[16 + (i % 16)] ^= b.wrapping_mul(31).wrapping_add(i as u8);
    }
    ChaCha8Rng::from_seed(key)
}
