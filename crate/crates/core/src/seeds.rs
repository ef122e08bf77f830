//! Deterministic seed derivation.
//!
//! Every randomized subsystem (init, rollouts, task generation, shuffling)
//! gets its own stream derived from the master seed and a stable label, so
//! adding a consumer never perturbs the draws seen by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `master` and a label via FNV-1a over the label
/// bytes folded into the master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    fnv1a(label.as_bytes()) ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// RNG for a named subsystem under the given master seed.
pub fn stream_rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}
