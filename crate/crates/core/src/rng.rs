//! Seeded, labelled random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the SHA-256 digest
//! of `(namespace, seed, label)`. The output sequence is therefore fixed by the
//! pinned versions of `rand_chacha` and `sha2` in `Cargo.lock`, independent of
//! platform, thread count or call order of unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

const NAMESPACE: &[u8] = b"crossnego/rng/v1";

/// Deterministic random stream for `(seed, stream_label)`.
pub fn seeded_rng(seed: u64, stream_label: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(NAMESPACE);
    hasher.update(seed.to_le_bytes());
    hasher.update((stream_label.len() as u64).to_le_bytes());
    hasher.update(stream_label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
