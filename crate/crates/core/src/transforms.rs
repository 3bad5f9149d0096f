//! SDE-to-SDE rewrites: the Lamperti transform for time-only diffusion and
//! the conversion of a flow-matching model into a family of SDEs.
//!
//! ## Time and schedule conventions
//!
//! Flow models are simulated forward in `t ∈ [0, 1]` with `dt > 0`, where
//! `t = 1 - τ` and `τ` is the noising time. `ς(t)` is the noise level at
//! `t`, so it decreases along a sampling run. `ς̇(t)` is the rate of the
//! noising schedule, `dς/dτ` evaluated at `τ = 1 - t` (equivalently
//! `-dς/dt`), which makes `ς̇ς ≥ 0`. With this reading the drift
//! `(ς̇ς + α)·s` preserves the marginals `p(x, t)` for every `α ≥ 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{LrwError, Result};
use crate::sde::{SdeSpec, VectorField};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub struct NoiseSchedule {
    pub sigma: ScalarFn,
    /// Noising-time rate `dς/dτ` at `τ = 1 - t`; see the module docs.
    pub sigma_dot: ScalarFn,
    pub alpha: ScalarFn,
}

impl fmt::Debug for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NoiseSchedule { .. }")
    }
}

impl NoiseSchedule {
    pub fn new<S, D, A>(sigma: S, sigma_dot: D, alpha: A) -> Self
    where
        S: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        A: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            sigma: Arc::new(sigma),
            sigma_dot: Arc::new(sigma_dot),
            alpha: Arc::new(alpha),
        }
    }

    /// Noising schedule `σ(τ) = σ_min + (σ_max - σ_min)·τ`, seen in sampling
    /// time as `ς(t) = σ(1 - t)`, with `α ≡ 0`.
    pub fn linear(sigma_min: f64, sigma_max: f64) -> Self {
        let rate = sigma_max - sigma_min;
        Self::new(
            move |t| sigma_min + rate * (1.0 - t),
            move |_| rate,
            |_| 0.0,
        )
    }

    /// Replaces `α` with `a·ς̇(t)ς(t)`.
    pub fn with_proportional_alpha(self, a: f64) -> Self {
        let sigma = self.sigma.clone();
        let sigma_dot = self.sigma_dot.clone();
        Self {
            alpha: Arc::new(move |t| a * sigma_dot(t) * sigma(t)),
            ..self
        }
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        (self.sigma)(t)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        (self.sigma_dot)(t) * (self.sigma)(t)
    }

    pub fn alpha_at(&self, t: f64) -> f64 {
        (self.alpha)(t)
    }

    /// Checks `ς > 0` and `α ≥ 0` on an evenly spaced grid over `[t0, t1]`.
    pub fn validate(&self, t0: f64, t1: f64, probes: usize) -> Result<()> {
        let n = probes.max(2);
        for k in 0..n {
            let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
            let s = self.sigma_at(t);
            if !(s > 0.0) {
                return Err(LrwError::InvalidParameter(format!("noise level {s} at t = {t} is not positive")));
            }
            let a = self.alpha_at(t);
            if !(a >= 0.0) {
                return Err(LrwError::InvalidParameter(format!("alpha {a} at t = {t} is negative")));
            }
        }
        Ok(())
    }
}

/// `dx = (ς̇ς + α)·s(x, t) dt + √(2α) dW`, checked on `[t0, t1]`.
pub fn flow_to_sde(dim: usize, score: VectorField, ns: &NoiseSchedule, t0: f64, t1: f64) -> Result<SdeSpec> {
    ns.validate(t0, t1, 101)?;
    let drift_ns = ns.clone();
    let alpha = ns.alpha.clone();
    SdeSpec::new(
        dim,
        move |x, t, out| {
            score(x, t, out);
            let c = drift_ns.rate_at(t) + drift_ns.alpha_at(t);
            for v in out.iter_mut() {
                *v *= c;
            }
        },
        move |_, t, out| out.fill((2.0 * alpha(t).max(0.0)).sqrt()),
    )
}

/// `s = -u(x, 1 - t) / (ς̇(t)ς(t))`.
pub fn velocity_to_score<U>(velocity: U, ns: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>>
where
    U: Fn(&[f64], f64) -> Vec<f64>,
{
    let rate = ns.rate_at(t);
    if rate == 0.0 || !rate.is_finite() {
        return Err(LrwError::InvalidParameter(format!("singular velocity conversion at t = {t}")));
    }
    Ok(velocity(x, 1.0 - t).into_iter().map(|u| -u / rate).collect())
}

/// Time-only diffusion for the Lamperti transform.
#[derive(Clone)]
pub enum TimeDiffusion {
    /// Positive diagonal `σ(t)` and its time derivative.
    Diagonal { sigma: VectorFn, sigma_dot: VectorFn },
    /// Dense `σ(t)` with user-supplied `σ(t)⁻¹` and `d/dt σ(t)⁻¹`.
    Dense {
        sigma: MatrixFn,
        inverse: MatrixFn,
        inverse_dot: MatrixFn,
    },
}

impl fmt::Debug for TimeDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeDiffusion::Diagonal { .. } => f.write_str("TimeDiffusion::Diagonal"),
            TimeDiffusion::Dense { .. } => f.write_str("TimeDiffusion::Dense"),
        }
    }
}

impl TimeDiffusion {
    pub fn diagonal<S, D>(sigma: S, sigma_dot: D) -> Self
    where
        S: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        D: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        TimeDiffusion::Diagonal {
            sigma: Arc::new(sigma),
            sigma_dot: Arc::new(sigma_dot),
        }
    }

    pub fn dense<S, I, D>(sigma: S, inverse: I, inverse_dot: D) -> Self
    where
        S: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        I: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        TimeDiffusion::Dense {
            sigma: Arc::new(sigma),
            inverse: Arc::new(inverse),
            inverse_dot: Arc::new(inverse_dot),
        }
    }

    fn check_at(&self, dim: usize, t: f64) -> Result<()> {
        match self {
            TimeDiffusion::Diagonal { sigma, sigma_dot } => {
                let s = sigma(t);
                let sd = sigma_dot(t);
                if s.len() != dim || sd.len() != dim {
                    return Err(LrwError::DimensionMismatch {
                        expected: dim,
                        got: s.len().min(sd.len()),
                    });
                }
                if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(LrwError::SingularDiffusion { t });
                }
            }
            TimeDiffusion::Dense { sigma, inverse, .. } => {
                let s = sigma(t);
                let inv = inverse(t);
                if s.shape() != (dim, dim) || inv.shape() != (dim, dim) {
                    return Err(LrwError::DimensionMismatch {
                        expected: dim,
                        got: s.nrows(),
                    });
                }
                let residual = (&s * &inv - DMatrix::<f64>::identity(dim, dim)).abs().max();
                if !(residual <= 1e-8) {
                    return Err(LrwError::SingularDiffusion { t });
                }
            }
        }
        Ok(())
    }
}

/// Result of a Lamperti transform: the `z`-space SDE with constant
/// diffusion `κ`, plus maps between the two coordinate systems.
#[derive(Clone, Debug)]
pub struct Lamperti {
    pub spec: SdeSpec,
    pub kappa: f64,
    diffusion: TimeDiffusion,
}

impl Lamperti {
    /// `x = σ(t) z / κ`.
    pub fn to_x(&self, z: &[f64], t: f64) -> Vec<f64> {
        match &self.diffusion {
            TimeDiffusion::Diagonal { sigma, .. } => {
                sigma(t).iter().zip(z).map(|(s, zi)| s * zi / self.kappa).collect()
            }
            TimeDiffusion::Dense { sigma, .. } => {
                let zv = nalgebra::DVector::from_column_slice(z);
                (sigma(t) * zv / self.kappa).as_slice().to_vec()
            }
        }
    }

    /// `z = κ σ(t)⁻¹ x`.
    pub fn to_z(&self, x: &[f64], t: f64) -> Vec<f64> {
        match &self.diffusion {
            TimeDiffusion::Diagonal { sigma, .. } => {
                sigma(t).iter().zip(x).map(|(s, xi)| self.kappa * xi / s).collect()
            }
            TimeDiffusion::Dense { inverse, .. } => {
                let xv = nalgebra::DVector::from_column_slice(x);
                (inverse(t) * xv * self.kappa).as_slice().to_vec()
            }
        }
    }
}

/// Rewrites `dx = f dt + σ(t) dW` as
/// `dz = [d/dt(σ⁻¹)·σ·z + κ·σ⁻¹·f(σz/κ, t)] dt + κ dW`.
///
/// The diffusion of `spec` is ignored; `td` supplies `σ(t)`. Invertibility is
/// checked at `probe_times`.
pub fn lamperti_transform(spec: &SdeSpec, td: TimeDiffusion, kappa: f64, probe_times: &[f64]) -> Result<Lamperti> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(LrwError::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let d = spec.dim();
    for &t in probe_times {
        td.check_at(d, t)?;
    }
    let f = spec.drift_field().clone();
    let drift: VectorField = match &td {
        TimeDiffusion::Diagonal { sigma, sigma_dot } => {
            let (sigma, sigma_dot) = (sigma.clone(), sigma_dot.clone());
            Arc::new(move |z: &[f64], t: f64, out: &mut [f64]| {
                let s = sigma(t);
                let sd = sigma_dot(t);
                let x: Vec<f64> = s.iter().zip(z).map(|(si, zi)| si * zi / kappa).collect();
                f(&x, t, out);
                for i in 0..out.len() {
                    // d/dt(1/σ)·σ = -σ̇/σ
                    out[i] = -sd[i] / s[i] * z[i] + kappa * out[i] / s[i];
                }
            })
        }
        TimeDiffusion::Dense {
            sigma,
            inverse,
            inverse_dot,
        } => {
            let (sigma, inverse, inverse_dot) = (sigma.clone(), inverse.clone(), inverse_dot.clone());
            Arc::new(move |z: &[f64], t: f64, out: &mut [f64]| {
                let s = sigma(t);
                let zv = nalgebra::DVector::from_column_slice(z);
                let x = &s * &zv / kappa;
                let mut fx = vec![0.0; z.len()];
                f(x.as_slice(), t, &mut fx);
                let fx = nalgebra::DVector::from_vec(fx);
                let dz = inverse_dot(t) * &s * &zv + inverse(t) * fx * kappa;
                out.copy_from_slice(dz.as_slice());
            })
        }
    };
    let spec = SdeSpec::from_fields(d, drift, Arc::new(move |_: &[f64], _: f64, out: &mut [f64]| out.fill(kappa)))?;
    Ok(Lamperti {
        spec,
        kappa,
        diffusion: td,
    })
}
