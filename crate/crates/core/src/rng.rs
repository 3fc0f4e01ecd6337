//! Seeded random number generation.
//!
//! Everything stochastic in the crate flows through this wrapper around
//! ChaCha8, so a run is reproducible from a single `RngSeed` and
//! replication k of a batch can use the derived seed `base + k` without
//! overlapping streams in practice.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Name of the generator, recorded in run manifests.
pub const RNG_NAME: &str = "chacha8";

/// Seed for one deterministic stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Derived seed for replication (or sub-stream) `k`.
    pub fn stream(self, k: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(k))
    }
}

/// Deterministic generator with uniform and Gaussian output.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn from_seed(seed: RngSeed) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed.0),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Box-Muller transform; pairs are cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let angle = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * math::sin(angle));
        r * math::cos(angle)
    }
}
