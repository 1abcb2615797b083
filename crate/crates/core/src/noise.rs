//! Counter-addressed Gaussian noise.
//!
//! Every variate is a pure function of `(seed, step, particle, component)`.
//! The generator is ChaCha8 keyed by `seed` (expanded with
//! `SeedableRng::seed_from_u64`), with the ChaCha stream id set to the step
//! index and the word position set to `particle << 32`. The `d` components
//! of one particle are drawn in order from that position with the ziggurat
//! `StandardNormal` sampler. Changing any of this changes every trajectory
//! and must be accompanied by regenerated golden files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Step index reserved for drawing initial ensembles.
pub const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    base: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Fills `out` with the standard normals for `(step, particle, 0..out.len())`.
    pub fn fill(&self, step: u64, particle: usize, out: &mut [f64]) {
        let mut rng = self.base.clone();
        rng.set_stream(step);
        rng.set_word_pos((particle as u128) << 32);
        for o in out.iter_mut() {
            *o = StandardNormal.sample(&mut rng);
        }
    }

    pub fn normals(&self, step: u64, particle: usize, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        self.fill(step, particle, &mut v);
        v
    }
}
