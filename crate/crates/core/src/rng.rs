//! Seedable random streams.
//!
//! Every stream is a ChaCha8 generator. [`RngStream::new`] seeds it with
//! `ChaCha8Rng::seed_from_u64(seed)` on stream 0; [`RngStream::for_replica`]
//! uses the same key and selects ChaCha stream number `replica`, so replicas
//! derived from one seed never share a keystream.
//!
//! Uniforms take the top 53 bits of one 64-bit output: `(u >> 11) * 2^-53`,
//! which lies in `[0, 1)`. Standard normals use the cosine branch of the
//! Box-Muller transform and consume exactly two uniforms per draw.
//!
//! The stream counts the uniforms and normals it hands out, so callers can
//! check which schemes touch the Gaussian sampler.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
    uniform_draws: u64,
    normal_draws: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::for_replica(seed, 0)
    }

    /// Independent stream number `replica` under `seed`.
    pub fn for_replica(seed: u64, replica: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(replica);
        Self {
            inner,
            uniform_draws: 0,
            normal_draws: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.uniform_draws += 1;
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Standard normal draw from two uniforms.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.normal_draws += 1;
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn uniform_draws(&self) -> u64 {
        self.uniform_draws
    }

    pub fn normal_draws(&self) -> u64 {
        self.normal_draws
    }
}

/// Free-function form of [`RngStream::standard_normal`].
pub fn standard_normal(rng: &mut RngStream) -> f64 {
    rng.standard_normal()
}
