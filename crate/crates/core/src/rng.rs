//! Counter-keyed random streams.
//!
//! Every draw is addressed by `(seed, label, stream, step)`: the seed and a
//! text label are hashed into a ChaCha key, the stream selects a ChaCha
//! stream (one per particle or path) and the step selects a block position.
//! Draws therefore do not depend on evaluation order or thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Words reserved per step; a step may consume at most this many 32-bit words
/// before the next step's block begins.
const WORDS_PER_STEP: u128 = 64;

#[derive(Debug, Clone)]
pub struct NoiseKey {
    key: [u8; 32],
}

impl NoiseKey {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self { key }
    }

    /// Generator positioned at the start of block `step` of stream `stream`.
    pub fn generator(&self, stream: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }

    /// Two independent standard normals for `(stream, step)`.
    pub fn normals2(&self, stream: u64, step: u64) -> (f64, f64) {
        let mut rng = self.generator(stream, step);
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        (a, b)
    }

    /// Uniform draw in `[0, 1)` for `(stream, step)`.
    pub fn uniform(&self, stream: u64, step: u64) -> f64 {
        let mut rng = self.generator(stream, step);
        unit_f64(&mut rng)
    }
}

/// Uniform `[0,1)` from the top 53 bits of one 64-bit word.
pub fn unit_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives a sub-seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/");
    hasher.update(label.as_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
