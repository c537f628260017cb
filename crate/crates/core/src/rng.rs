//! Counter-style random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is
//! the SHA-256 digest of `(master seed, stream domain, indices...)`. Work items
//! can therefore be generated in any order, on any thread, and still produce
//! the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Domain tag separating the purposes random numbers are drawn for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stream {
    Placement = 1,
    Shadowing = 2,
    Channel = 3,
    PilotNoise = 4,
    Split = 5,
    Init = 6,
    Shuffle = 7,
    Dropout = 8,
    Setup = 9,
}

pub fn substream(master: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"cellfree-substream");
    hasher.update(master.to_le_bytes());
    hasher.update([stream as u8]);
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child seed, e.g. one master seed per Monte-Carlo setup.
pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    use rand::RngCore;
    substream(master, stream, indices).next_u64()
}
