//! Reproducible random streams keyed by `(master_seed, purpose, index)`.
//!
//! Each stream is a ChaCha20 generator whose 256-bit key is the SHA-256
//! digest of the triple, so streams for different purposes or replicates
//! never overlap and do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive the generator for one `(master_seed, purpose, index)` triple.
pub fn stream(master_seed: u64, purpose: &str, index: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}
