//! Seed derivation and stable hashing.
//!
//! Every stochastic component (controls, process noise, the queue, age noise,
//! parameter init, replay sampling) draws from its own stream derived from the
//! master seed and a label. Reruns with the same seed are bit-identical, and
//! one stream can be changed without disturbing the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over raw bytes. Used for seed derivation and config fingerprints;
/// not a cryptographic hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the sub-stream `(label, index)` under `master`.
pub fn substream_seed(master: u64, label: &str, index: u64) -> u64 {
    let a = splitmix(master ^ fnv1a(label.as_bytes()));
    splitmix(a ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Independent RNG for the sub-stream `(label, index)` under `master`.
pub fn substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, label, index))
}

/// Incremental FNV-1a hasher for run traces and fingerprints. Floats are
/// hashed by bit pattern, so two traces hash equal only if they are
/// bit-identical.
#[derive(Clone, Debug)]
pub struct StableHasher(u64);

impl StableHasher {
    pub fn new() -> Self {
        StableHasher(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write_bytes(&x.to_le_bytes());
    }

    pub fn write_f64(&mut self, x: f64) {
        self.write_bytes(&x.to_bits().to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}
