//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is
//! derived from a root seed plus either an index (samples, chains, bootstrap
//! resamples) or a stage label. Derived seeds are stable across platforms,
//! thread counts and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Seed for the `index`-th independent stream under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"index");
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    first_u64(&h.finalize())
}

/// Seed for a named stage, so adding a stage never shifts another's stream.
pub fn stage_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"stage");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    first_u64(&h.finalize())
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)` built from the top 53 bits of one `u64`.
#[inline]
pub fn uniform01<R: rand::RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn first_u64(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[..8]);
    u64::from_le_bytes(buf)
}
