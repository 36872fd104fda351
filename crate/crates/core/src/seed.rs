//! Seed derivation. Every random stream in a run is keyed off the master
//! seed and a label, so results do not depend on the order work is done in.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives a stream seed as the first 8 bytes of `SHA-256(master_le || label)`.
pub fn derive_stream_seed(master_seed: u64, label: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label);
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Seeds a generator for the stream `label` under `master_seed`.
pub fn stream_rng(master_seed: u64, label: &[u8]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_stream_seed(master_seed, label))
}

pub(crate) fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
