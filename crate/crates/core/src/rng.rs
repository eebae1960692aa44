//! Deterministic, label-addressed random streams.
//!
//! Every stochastic site derives its own generator from the run seed, a
//! string label, and integer counters (step index, sample id, attempt).
//! Streams are independent by construction, so adding a consumer or resuming
//! a run mid-way cannot shift the draws any other site sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A generator keyed by (root, label, counters).
pub fn stream(root: u64, label: &str, counters: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u32).to_le_bytes());
    h.update(label.as_bytes());
    for c in counters {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
