//! Seeded pseudo-randomness.
//!
//! One generator is used everywhere: ChaCha with 8 rounds, seeded from a
//! `u64` through `rand_chacha`'s `seed_from_u64`. Floats and normals are
//! derived here from raw `u64` words so the streams do not depend on any
//! distribution code that might change between crate releases.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Identifier written into every report and checkpoint.
pub const PRNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for a named sub-stream, derived from this
    /// generator's seed (not its current position).
    pub fn derive(&self, stream: u64) -> Prng {
        Prng::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9e37_79b9))))
    }

    pub fn algorithm_id(&self) -> &'static str {
        PRNG_ALGORITHM
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("uniform needs lo < hi, got [{lo}, {hi})")));
        }
        let v = lo + (hi - lo) * self.next_f64();
        // lo + (hi-lo)*u can round up to hi
        Ok(if v >= hi { hi.next_down() } else { v })
    }

    /// Standard normal draw (Box–Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Uniform in `[lo, hi)`; free-function form of [`Prng::uniform`].
pub fn prng_uniform(rng: &mut Prng, lo: f64, hi: f64) -> Result<f64> {
    rng.uniform(lo, hi)
}

/// Uniformly random permutation of `0..n`.
pub fn fisher_yates_permutation(rng: &mut Prng, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("permutation of zero elements".into()));
    }
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    Ok(p)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
