//! Euler-Maruyama and the two-point scheme.
//!
//! Both take `x + dt·f + √dt·σ⊙ξ`; EM draws `ξ` from the normal sampler and
//! the two-point scheme uses equiprobable signs (`η < 0.5` gives `-1`).

use crate::error::{LrwError, Result};
use crate::rng::RngStream;
use crate::sde::{SdeSpec, Stepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Noise {
    Gaussian,
    TwoPoint,
}

#[inline]
pub fn two_point_sign(eta: f64) -> f64 {
    if eta < 0.5 {
        -1.0
    } else {
        1.0
    }
}

fn additive_step(spec: &SdeSpec, x: &mut [f64], t: f64, dt: f64, rng: &mut RngStream, bufs: &mut Buffers, noise: Noise) {
    let d = spec.dim();
    bufs.drift.resize(d, 0.0);
    bufs.diffusion.resize(d, 0.0);
    spec.drift_into(x, t, &mut bufs.drift);
    spec.diffusion_into(x, t, &mut bufs.diffusion);
    let root_dt = dt.sqrt();
    for i in 0..d {
        let xi = match noise {
            Noise::Gaussian => rng.standard_normal(),
            Noise::TwoPoint => two_point_sign(rng.uniform()),
        };
        x[i] += dt * bufs.drift[i] + root_dt * bufs.diffusion[i] * xi;
    }
}

#[derive(Clone, Debug, Default)]
struct Buffers {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

fn check(spec: &SdeSpec, x: &[f64], dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(LrwError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if x.len() != spec.dim() {
        return Err(LrwError::DimensionMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn em_step(spec: &SdeSpec, x: &[f64], t: f64, dt: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    check(spec, x, dt)?;
    let mut next = x.to_vec();
    EmStepper::default().step(spec, &mut next, t, dt, rng);
    Ok(next)
}

pub fn two_point_step(spec: &SdeSpec, x: &[f64], t: f64, dt: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    check(spec, x, dt)?;
    let mut next = x.to_vec();
    TwoPointStepper::default().step(spec, &mut next, t, dt, rng);
    Ok(next)
}

#[derive(Clone, Debug, Default)]
pub struct EmStepper {
    bufs: Buffers,
}

impl Stepper for EmStepper {
    fn step(&mut self, spec: &SdeSpec, x: &mut [f64], t: f64, dt: f64, rng: &mut RngStream) {
        additive_step(spec, x, t, dt, rng, &mut self.bufs, Noise::Gaussian);
    }

    fn gaussian_free(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, Default)]
pub struct TwoPointStepper {
    bufs: Buffers,
}

impl Stepper for TwoPointStepper {
    fn step(&mut self, spec: &SdeSpec, x: &mut [f64], t: f64, dt: f64, rng: &mut RngStream) {
        additive_step(spec, x, t, dt, rng, &mut self.bufs, Noise::TwoPoint);
    }

    fn gaussian_free(&self) -> bool {
        true
    }
}

/// Exact conditional second moment `dt·σ² + dt²·f²` of an EM or two-point
/// increment.
pub fn additive_increment_second_moment(f: f64, sigma: f64, dt: f64) -> f64 {
    dt * sigma * sigma + dt * dt * f * f
}
