//! Deterministic RNG streams.
//!
//! Every randomized phase of a run (initial-state draws, net init,
//! minibatch sampling, collocation sampling, ...) pulls from its own
//! ChaCha stream derived from the run seed and a phase label, so adding
//! or removing draws in one phase never shifts another phase's sequence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// 64-bit FNV-1a. Used for stream labels and config hashing; not
/// cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(label.as_bytes()).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Derived sub-seed for nested runs (e.g. one dataset per type config).
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    fnv1a64(&bytes)
}
