//! Seeded zipfian key popularity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

/// Draws ranks in `[1, n]` with `P(k) ∝ 1 / k^alpha`.
#[derive(Debug, Clone)]
pub struct ZipfGenerator {
    n: u64,
    alpha: f64,
    dist: Zipf<f64>,
    rng: ChaCha8Rng,
}

impl ZipfGenerator {
    pub fn new(n: u64, alpha: f64, seed: u64) -> anyhow::Result<Self> {
        anyhow::ensure!(n >= 1, "zipf population must be at least 1");
        anyhow::ensure!(alpha >= 0.0 && alpha.is_finite(), "zipf skew must be non-negative");
        let dist = Zipf::new(n as f64, alpha)?;
        Ok(ZipfGenerator { n, alpha, dist, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn population(&self) -> u64 {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sample(&mut self) -> u64 {
        (self.dist.sample(&mut self.rng) as u64).clamp(1, self.n)
    }

    /// Uniform draw from the generator's own stream.
    pub fn uniform(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        self.rng.random_range(lo..=hi_inclusive)
    }
}

/// Normalized probability of rank `k` under the zipf law, by direct summation.
pub fn zipf_pmf(n: u64, alpha: f64, k: u64) -> f64 {
    let norm: f64 = (1..=n).map(|i| (i as f64).powf(-alpha)).sum();
    (k as f64).powf(-alpha) / norm
}
