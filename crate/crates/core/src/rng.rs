//! Deterministic, platform-stable random streams.
//!
//! Every randomized stage draws from its own ChaCha stream whose seed
//! is derived by hashing `(base_seed, index, stage_name)`. Streams are
//! therefore independent of execution order, which keeps experiments
//! reproducible even when runs execute concurrently.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `(base, index, stage)`.
pub fn derive_seed(base: u64, index: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest ≥ 8 bytes"))
}

/// A ChaCha stream for one `(base, index, stage)` triple.
pub fn stream(base: u64, index: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index, stage))
}
