//! Deterministic seed derivation and RNG construction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a sub-seed from `(parent, role, index)`.
///
/// The mapping is a truncated SHA-256 of a length-prefixed encoding, so it is
/// stable across platforms and releases and independent of evaluation order.
pub fn derive_seed(parent: u64, role: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"gapchain-seed-v1");
    h.update(parent.to_le_bytes());
    h.update((role.len() as u64).to_le_bytes());
    h.update(role.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
