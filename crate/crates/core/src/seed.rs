//! Derivation of per-component seeds from one experiment seed.
//!
//! Every stochastic stage (splitting, augmentation, weight init, shuffling,
//! dropout) draws from its own stream so any stage can be re-run alone.
//! A component seed is the first eight bytes (little-endian) of
//! `SHA-256("vidbench/<component>/<experiment seed>")`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPLIT: &str = "split";
pub const AUGMENT: &str = "augment";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const DROPOUT: &str = "dropout";

pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(format!("vidbench/{component}/{seed}").as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed derived from a component seed plus a free-form key (video id, epoch, ...).
pub fn derive_keyed(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
