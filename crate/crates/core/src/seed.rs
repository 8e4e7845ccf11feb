//! Seed fan-out.
//!
//! A run carries one global seed. Every stochastic component derives its own
//! stream from `(global seed, component name)`:
//!
//! ```text
//! sub_seed = first 8 bytes (little endian) of SHA-256(seed as u64 LE || name as UTF-8)
//! ```
//!
//! Streams depend only on their own name, so adding a component never
//! perturbs the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The RNG used throughout the crate. ChaCha output is specified
/// bit-for-bit, so streams are identical across platforms.
pub type SimRng = ChaCha8Rng;

pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn component_rng(seed: u64, component: &str) -> SimRng {
    rng_from_seed(derive_seed(seed, component))
}
