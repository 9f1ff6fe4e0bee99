//! Counter-style deterministic random streams.
//!
//! Every random decision in the workbench draws from a ChaCha8 stream keyed
//! by `(seed, purpose, index)`. Because each (image, epoch, layer, ...) gets
//! its own stream, results do not depend on batching, chunking, or thread
//! count: the same index always sees the same byte sequence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags that keep unrelated consumers off each other's streams.
pub mod purpose {
    pub const WEIGHT_INIT: u64 = 0x01;
    pub const TRAIN_SHUFFLE: u64 = 0x02;
    pub const DATA_GEN: u64 = 0x03;
    pub const ATTACK: u64 = 0x04;
    pub const GRAD_CHECK: u64 = 0x05;
    pub const TEST: u64 = 0xFE;
}

/// Returns the ChaCha8 stream for `(seed, purpose, index)`.
///
/// The three values are packed little-endian into the 32-byte ChaCha key;
/// the last eight key bytes stay zero.
pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
