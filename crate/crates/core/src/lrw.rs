//! Lattice random walk discretisation.
//!
//! Each coordinate moves by `-dx`, `0` or `+dx` per step with probabilities
//!
//! ```text
//! p± = ½ (dt/dx) (±f + σ²/dx)
//! ```
//!
//! chosen so the increment has mean `dt·f` and second moment `dt·σ²`. When
//! the raw probabilities are invalid, `σ²` is first clipped to `dx²/dt`
//! (so `p₋ + p₊ ≤ 1`) and then `f` is clipped to `[-σ²/dx, σ²/dx]` using the
//! clipped `σ²` (so `p± ≥ 0`).

use std::fmt;
use std::sync::Arc;

use crate::error::{LrwError, Result};
use crate::rng::RngStream;
use crate::sde::{SdeSpec, Stepper};

/// Probabilities for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordProbs {
    pub p_minus: f64,
    pub p_plus: f64,
    pub clipped_sigma: bool,
    pub clipped_drift: bool,
}

impl CoordProbs {
    pub fn p_zero(&self) -> f64 {
        1.0 - self.p_minus - self.p_plus
    }

    /// Exact increment mean `(p₊ - p₋)·dx`.
    pub fn increment_mean(&self, dx: f64) -> f64 {
        (self.p_plus - self.p_minus) * dx
    }

    /// Exact increment second moment `(p₊ + p₋)·dx²`.
    pub fn increment_second_moment(&self, dx: f64) -> f64 {
        (self.p_plus + self.p_minus) * dx * dx
    }
}

/// Ternary probabilities for a single coordinate, with clipping.
#[inline]
pub fn coord_probs(f: f64, sigma: f64, dt: f64, dx: f64) -> CoordProbs {
    // Excursions of a few ulps past a bound are rounding, not clipping.
    const SLACK: f64 = 1.0 + 4.0 * f64::EPSILON;
    let s2_max = dx * dx / dt;
    let raw_s2 = sigma * sigma;
    let clipped_sigma = raw_s2 > s2_max * SLACK;
    let s2 = raw_s2.min(s2_max);
    let f_max = s2 / dx;
    let clipped_drift = f.abs() > f_max * SLACK;
    let f = f.clamp(-f_max, f_max);

    let scale = 0.5 * dt / dx;
    let noise = s2 / dx;
    let mut p_plus = (scale * (f + noise)).max(0.0);
    let mut p_minus = (scale * (noise - f)).max(0.0);
    // Rounding can push the sum a few ulps past one when sigma sits on the bound.
    let total = p_plus + p_minus;
    if total > 1.0 {
        p_plus /= total;
        p_minus /= total;
        if p_plus + p_minus > 1.0 {
            p_minus = 1.0 - p_plus;
        }
    }
    CoordProbs {
        p_minus,
        p_plus,
        clipped_sigma,
        clipped_drift,
    }
}

/// Per-coordinate probabilities and clipping masks.
#[derive(Clone, Debug, PartialEq)]
pub struct TernaryProbs {
    pub p_minus: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub clipped_sigma: Vec<bool>,
    pub clipped_drift: Vec<bool>,
}

impl TernaryProbs {
    pub fn coord(&self, i: usize) -> CoordProbs {
        CoordProbs {
            p_minus: self.p_minus[i],
            p_plus: self.p_plus[i],
            clipped_sigma: self.clipped_sigma[i],
            clipped_drift: self.clipped_drift[i],
        }
    }

    pub fn any_clipped(&self) -> bool {
        self.clipped_sigma.iter().chain(&self.clipped_drift).any(|&c| c)
    }
}

fn check_steps(dt: f64, dx: &[f64], dim: usize) -> Result<()> {
    if !(dt > 0.0) {
        return Err(LrwError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if dx.len() != dim {
        return Err(LrwError::DimensionMismatch {
            expected: dim,
            got: dx.len(),
        });
    }
    if let Some(bad) = dx.iter().find(|&&v| !(v > 0.0)) {
        return Err(LrwError::InvalidParameter(format!("dx must be positive, got {bad}")));
    }
    Ok(())
}

pub fn ternary_probs(spec: &SdeSpec, x: &[f64], t: f64, dt: f64, dx: &[f64]) -> Result<TernaryProbs> {
    check_steps(dt, dx, spec.dim())?;
    let f = spec.drift(x, t);
    let s = spec.diffusion(x, t);
    let d = spec.dim();
    let mut out = TernaryProbs {
        p_minus: Vec::with_capacity(d),
        p_plus: Vec::with_capacity(d),
        clipped_sigma: Vec::with_capacity(d),
        clipped_drift: Vec::with_capacity(d),
    };
    for i in 0..d {
        let p = coord_probs(f[i], s[i], dt, dx[i]);
        out.p_minus.push(p.p_minus);
        out.p_plus.push(p.p_plus);
        out.clipped_sigma.push(p.clipped_sigma);
        out.clipped_drift.push(p.clipped_drift);
    }
    Ok(out)
}

/// Admissible spatial steps `[√dt·σ, σ²/|f|]` per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct DxRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DxRange {
    /// Coordinates whose range is empty.
    pub fn empty_mask(&self) -> Vec<bool> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| l > h).collect()
    }

    pub fn contains(&self, dx: &[f64]) -> bool {
        dx.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| l <= v && v <= h)
    }
}

pub fn allowable_dx_range(f_abs: &[f64], sigma: &[f64], dt: f64) -> Result<DxRange> {
    if !(dt > 0.0) {
        return Err(LrwError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if f_abs.len() != sigma.len() {
        return Err(LrwError::DimensionMismatch {
            expected: sigma.len(),
            got: f_abs.len(),
        });
    }
    if let Some(bad) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(LrwError::InvalidParameter(format!("sigma must be positive, got {bad}")));
    }
    let root_dt = dt.sqrt();
    let lo = sigma.iter().map(|s| root_dt * s).collect();
    let hi = f_abs
        .iter()
        .zip(sigma)
        .map(|(f, s)| if *f == 0.0 { f64::INFINITY } else { s * s / f.abs() })
        .collect();
    Ok(DxRange { lo, hi })
}

/// `σ² ≥ dt·f²` per coordinate.
pub fn check_feasibility(f_abs: &[f64], sigma: &[f64], dt: f64) -> Result<Vec<bool>> {
    if !(dt > 0.0) {
        return Err(LrwError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if f_abs.len() != sigma.len() {
        return Err(LrwError::DimensionMismatch {
            expected: sigma.len(),
            got: f_abs.len(),
        });
    }
    Ok(f_abs
        .iter()
        .zip(sigma)
        .map(|(f, s)| {
            let s2 = s * s;
            s2 > 0.0 && s2 >= dt * f * f
        })
        .collect())
}

/// `dx = √dt · σ_max`.
pub fn rule_of_thumb_dx(dt: f64, sigma_max: &[f64]) -> Vec<f64> {
    let root_dt = dt.sqrt();
    sigma_max.iter().map(|s| root_dt * s).collect()
}

/// Maps a uniform draw to an increment in `{-1, 0, +1}`: `-1` below `p₋`,
/// `+1` at or above `1 - p₊`, `0` in between.
#[inline]
pub fn threshold_increment(eta: f64, p_minus: f64, p_plus: f64) -> i8 {
    if eta < p_minus {
        -1
    } else if eta >= 1.0 - p_plus {
        1
    } else {
        0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub clipped: u64,
    pub zero_moves: u64,
}

/// Scratch buffers for the in-place step.
#[derive(Clone, Debug, Default)]
pub struct LrwScratch {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl LrwScratch {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            diffusion: vec![0.0; dim],
        }
    }

    fn fill(&mut self, spec: &SdeSpec, x: &[f64], t: f64) {
        let d = spec.dim();
        self.drift.resize(d, 0.0);
        self.diffusion.resize(d, 0.0);
        spec.drift_into(x, t, &mut self.drift);
        spec.diffusion_into(x, t, &mut self.diffusion);
    }
}

/// One LRW step applied in place. Consumes exactly `d` uniforms.
pub fn lrw_step_in_place(
    spec: &SdeSpec,
    x: &mut [f64],
    t: f64,
    dt: f64,
    dx: &[f64],
    rng: &mut RngStream,
    scratch: &mut LrwScratch,
) -> StepStats {
    scratch.fill(spec, x, t);
    let mut stats = StepStats::default();
    for i in 0..x.len() {
        let p = coord_probs(scratch.drift[i], scratch.diffusion[i], dt, dx[i]);
        stats.clipped += u64::from(p.clipped_sigma || p.clipped_drift);
        match threshold_increment(rng.uniform(), p.p_minus, p.p_plus) {
            -1 => x[i] -= dx[i],
            1 => x[i] += dx[i],
            _ => stats.zero_moves += 1,
        }
    }
    stats
}

pub fn lrw_step(spec: &SdeSpec, x: &[f64], t: f64, dt: f64, dx: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    check_steps(dt, dx, spec.dim())?;
    if x.len() != spec.dim() {
        return Err(LrwError::DimensionMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    let mut next = x.to_vec();
    lrw_step_in_place(spec, &mut next, t, dt, dx, rng, &mut LrwScratch::new(spec.dim()));
    Ok(next)
}

/// Integer coordinates on the lattice `origin + dx ⊙ z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeState {
    pub z: Vec<i64>,
    pub origin: Vec<f64>,
    pub dx: Vec<f64>,
}

impl LatticeState {
    pub fn new(origin: Vec<f64>, dx: Vec<f64>) -> Result<Self> {
        if origin.len() != dx.len() {
            return Err(LrwError::DimensionMismatch {
                expected: dx.len(),
                got: origin.len(),
            });
        }
        if let Some(bad) = dx.iter().find(|&&v| !(v > 0.0)) {
            return Err(LrwError::InvalidParameter(format!("dx must be positive, got {bad}")));
        }
        Ok(Self {
            z: vec![0; dx.len()],
            origin,
            dx,
        })
    }

    /// Real-space view `origin + dx ⊙ z`.
    pub fn x(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.z.len()];
        self.write_x(&mut out);
        out
    }

    fn write_x(&self, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.origin[i] + self.dx[i] * self.z[i] as f64;
        }
    }

    /// Integer step; probabilities are evaluated at the real-space view.
    pub fn step(&mut self, spec: &SdeSpec, t: f64, dt: f64, rng: &mut RngStream, scratch: &mut LrwScratch) -> StepStats {
        let mut x = self.x();
        scratch.fill(spec, &x, t);
        x.clear();
        let mut stats = StepStats::default();
        for i in 0..self.z.len() {
            let p = coord_probs(scratch.drift[i], scratch.diffusion[i], dt, self.dx[i]);
            stats.clipped += u64::from(p.clipped_sigma || p.clipped_drift);
            let delta = threshold_increment(rng.uniform(), p.p_minus, p.p_plus);
            stats.zero_moves += u64::from(delta == 0);
            self.z[i] += i64::from(delta);
        }
        stats
    }
}

pub fn lrw_step_lattice(spec: &SdeSpec, ls: &LatticeState, t: f64, dt: f64, rng: &mut RngStream) -> Result<LatticeState> {
    check_steps(dt, &ls.dx, spec.dim())?;
    let mut next = ls.clone();
    next.step(spec, t, dt, rng, &mut LrwScratch::new(spec.dim()));
    Ok(next)
}

/// Spatial step as a function of time.
#[derive(Clone)]
pub enum DxSchedule {
    Constant(Vec<f64>),
    TimeVarying(Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>),
}

impl DxSchedule {
    pub fn time_varying<F>(f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        DxSchedule::TimeVarying(Arc::new(f))
    }
}

impl fmt::Debug for DxSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DxSchedule::Constant(dx) => f.debug_tuple("Constant").field(dx).finish(),
            DxSchedule::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

/// Real-space LRW stepper. Tracks how many coordinate-steps were clipped and
/// how many produced a zero move.
#[derive(Clone, Debug)]
pub struct LrwStepper {
    schedule: DxSchedule,
    dx: Vec<f64>,
    scratch: LrwScratch,
    coord_steps: u64,
    clipped: u64,
    zero_moves: u64,
}

pub fn make_lrw_stepper(schedule: DxSchedule) -> Result<LrwStepper> {
    if let DxSchedule::Constant(dx) = &schedule {
        if dx.is_empty() {
            return Err(LrwError::InvalidParameter("empty dx".into()));
        }
        if let Some(bad) = dx.iter().find(|&&v| !(v > 0.0)) {
            return Err(LrwError::InvalidParameter(format!("dx must be positive, got {bad}")));
        }
    }
    Ok(LrwStepper {
        dx: match &schedule {
            DxSchedule::Constant(dx) => dx.clone(),
            DxSchedule::TimeVarying(_) => Vec::new(),
        },
        schedule,
        scratch: LrwScratch::default(),
        coord_steps: 0,
        clipped: 0,
        zero_moves: 0,
    })
}

impl LrwStepper {
    pub fn coord_steps(&self) -> u64 {
        self.coord_steps
    }

    pub fn clipped_steps(&self) -> u64 {
        self.clipped
    }

    pub fn zero_moves(&self) -> u64 {
        self.zero_moves
    }

    pub fn clipped_fraction(&self) -> f64 {
        if self.coord_steps == 0 {
            0.0
        } else {
            self.clipped as f64 / self.coord_steps as f64
        }
    }
}

impl Stepper for LrwStepper {
    fn step(&mut self, spec: &SdeSpec, x: &mut [f64], t: f64, dt: f64, rng: &mut RngStream) {
        if let DxSchedule::TimeVarying(f) = &self.schedule {
            self.dx.resize(x.len(), 0.0);
            f(t, &mut self.dx);
            debug_assert!(self.dx.iter().all(|&v| v > 0.0), "dx schedule must be positive");
        }
        let stats = lrw_step_in_place(spec, x, t, dt, &self.dx, rng, &mut self.scratch);
        self.coord_steps += x.len() as u64;
        self.clipped += stats.clipped;
        self.zero_moves += stats.zero_moves;
    }

    fn gaussian_free(&self) -> bool {
        true
    }
}
