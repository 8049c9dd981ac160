//! Counter-based random streams.
//!
//! A stream is identified by `(master_seed, purpose, index)`. The ChaCha key
//! is `SHA-256(master_seed_le || purpose)` and `index` selects the ChaCha
//! stream, so distinct identifiers never share keystream and every
//! replication can be generated independently of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Identifier of one random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub key: [u8; 32],
    pub stream: u64,
}

pub fn stream_id(master_seed: u64, purpose: &str, index: u64) -> StreamId {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    StreamId { key, stream: index }
}

pub fn stream(master_seed: u64, purpose: &str, index: u64) -> StreamRng {
    let id = stream_id(master_seed, purpose, index);
    let mut rng = ChaCha12Rng::from_seed(id.key);
    rng.set_stream(id.stream);
    rng
}
