//! Seed splitting.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! master seed, a purpose label and up to two integer coordinates (usually
//! the collection step and a question id). The derivation is
//! `SHA-256(master_le || len(label)_le || label || a_le || b_le)`, truncated to
//! the first 32 bytes as the ChaCha seed. Adding a new consumer with a fresh
//! label never perturbs existing streams, and per-question streams make the
//! parallel and serial collection paths draw identical samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub mod purpose {
    pub const POOL: &str = "pool";
    pub const BATCH: &str = "batch";
    pub const ROLLOUT: &str = "rollout";
    pub const AUDIT: &str = "audit";
    pub const EVAL: &str = "eval";
}

pub fn derive_seed(master: u64, label: &str, a: u64, b: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, label: &str, a: u64, b: u64) -> SimRng {
    SimRng::from_seed(derive_seed(master, label, a, b))
}
