//! Seeded scenario generation.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter
//! advanced by `0x9E3779B97F4A7C15` and passed through a fixed finalizer.
//! Uniform reals are `(next_u64 >> 11) * 2^-53`, in `[0, 1)`. Both are part of
//! the run manifest under [`RNG_ALGORITHM`] so other implementations can
//! regenerate identical scenarios.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub const RNG_ALGORITHM: &str = "splitmix64/v1";

#[derive(Debug, Clone)]
pub struct ScenarioRng {
    inner: SplitMix64,
}

impl ScenarioRng {
    pub fn new(seed: u64) -> Self {
        ScenarioRng {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform point in the closed ball of the given radius, by rejection from
    /// the enclosing cube. Components are drawn in order.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> Vec<f64> {
        loop {
            let p: Vec<f64> = (0..dim).map(|_| self.uniform(-1.0, 1.0)).collect();
            let n2: f64 = p.iter().map(|c| c * c).sum();
            if n2 <= 1.0 {
                return p.into_iter().map(|c| c * radius).collect();
            }
        }
    }
}
