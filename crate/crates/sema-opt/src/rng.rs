//! Deterministic seeded randomness.
//!
//! All stochastic components draw from [`Stream`], a thin wrapper over the
//! counter-based ChaCha8 generator. A stream is addressed by a `(seed,
//! stream_id)` pair: equal pairs replay bit-identical sample sequences, and
//! distinct stream ids give statistically independent streams for parallel
//! seeds or replicates. Gaussian variates use the ziggurat sampler from
//! `rand_distr`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A reproducible random stream addressed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
}

impl Stream {
    /// Open the stream for `(seed, stream_id)` at its start.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Stream { rng, seed, stream_id }
    }

    /// The `(seed, stream_id)` address of this stream.
    pub fn address(&self) -> (u64, u64) {
        (self.seed, self.stream_id)
    }

    /// A fresh stream with the same seed and a different stream id.
    /// Used to hand sub-components (replicates, parallel seeds) their own
    /// independent randomness.
    pub fn substream(&self, offset: u64) -> Stream {
        Stream::new(self.seed, self.stream_id.wrapping_add(offset))
    }

    /// Standard normal variate.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Vector of independent `N(0, σ²)` variates.
    pub fn normal_vec(&mut self, d: usize, sigma: f64) -> Vec<f64> {
        (0..d).map(|_| sigma * self.normal()).collect()
    }

    /// Uniform variate in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform variate in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `{0, …, n−1}`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}
