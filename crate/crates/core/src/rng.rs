//! Named, counter-addressed random streams.
//!
//! Every random draw in the crate comes from a [`Stream`]: a ChaCha8 keystream
//! keyed by the run seed, with the ChaCha stream id derived from a purpose
//! label (`"init/enc_v"`, `"data"`, `"perm"`, ...). Sub-streams for sample `i`
//! start at a fixed word offset, so draws never depend on call order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Words reserved per indexed sub-stream (2^24 u32 words).
const WORDS_PER_INDEX: u128 = 1 << 24;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    seed: u64,
    label: String,
}

impl Stream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        Stream { seed, label: label.into() }
    }

    /// A stream whose label extends this one (`"data"` → `"data/eval"`).
    pub fn child(&self, suffix: &str) -> Self {
        Stream { seed: self.seed, label: format!("{}/{}", self.label, suffix) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Generator positioned at the start of sub-stream `index`.
    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(&self.label));
        rng.set_word_pos(index as u128 * WORDS_PER_INDEX);
        rng
    }

    pub fn rng(&self) -> ChaCha8Rng {
        self.at(0)
    }
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `count` distinct indices from `0..n` (partial Fisher–Yates).
pub fn sample_without_replacement(rng: &mut impl Rng, n: usize, count: usize) -> Vec<usize> {
    let count = count.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}
