//! Problem definition and the generic trajectory driver.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use crate::error::{LrwError, Result};
use crate::rng::RngStream;

/// Writes a length-`d` vector field evaluated at `(x, t)` into the output slice.
pub type VectorField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// States whose magnitude exceeds this are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e150;

/// `dx = f(x, t) dt + diag(sigma(x, t)) dW` in `d` dimensions.
///
/// The diffusion evaluator returns the diagonal of the diffusion matrix and
/// must be elementwise nonnegative.
#[derive(Clone)]
pub struct SdeSpec {
    dim: usize,
    drift: VectorField,
    diffusion: VectorField,
}

impl SdeSpec {
    pub fn new<F, G>(dim: usize, drift: F, diffusion: G) -> Result<Self>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        Self::from_fields(dim, Arc::new(drift), Arc::new(diffusion))
    }

    pub fn from_fields(dim: usize, drift: VectorField, diffusion: VectorField) -> Result<Self> {
        if dim == 0 {
            return Err(LrwError::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            drift,
            diffusion,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, t, out)
    }

    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, t, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.diffusion_into(x, t, &mut out);
        out
    }

    pub fn drift_field(&self) -> &VectorField {
        &self.drift
    }

    pub fn diffusion_field(&self) -> &VectorField {
        &self.diffusion
    }
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Temporal discretisation shared by all schemes. The spatial step of the
/// lattice scheme lives on its stepper (see [`crate::lrw::DxSchedule`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub t0: f64,
}

impl StepConfig {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        Self::starting_at(dt, n_steps, 0.0)
    }

    pub fn starting_at(dt: f64, n_steps: usize, t0: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LrwError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(LrwError::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(Self { dt, n_steps, t0 })
    }

    /// Time after `k` steps.
    #[inline]
    pub fn time_at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time_at(self.n_steps)
    }
}

/// A single-step transition `x_t -> x_{t+dt}`, applied in place.
pub trait Stepper {
    fn step(&mut self, spec: &SdeSpec, x: &mut [f64], t: f64, dt: f64, rng: &mut RngStream);

    /// True when the scheme never draws from the normal sampler.
    fn gaussian_free(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    NegativeDiffusion { coord: usize, value: f64 },
    /// Output entries left unset (the evaluator produced fewer than `d` values).
    WrongLength { field: &'static str, written: usize, expected: usize },
    NonFinite { field: &'static str, coord: usize },
    EvaluatorPanicked { field: &'static str, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub probe: usize,
    pub kind: ViolationKind,
}

/// Probes a spec at the given points. An empty report means every probe passed.
///
/// Output buffers are pre-filled with NaN, so an evaluator that fills fewer
/// than `d` entries shows up as a wrong-length violation. An evaluator that
/// writes past the end of the buffer panics and is reported as such.
pub fn validate_spec(spec: &SdeSpec, probes: &[(Vec<f64>, f64)]) -> Result<Vec<Violation>> {
    if probes.is_empty() {
        return Err(LrwError::InvalidParameter("probe list is empty".into()));
    }
    let d = spec.dim();
    let mut report = Vec::new();
    for (i, (x, t)) in probes.iter().enumerate() {
        if x.len() != d {
            return Err(LrwError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        for (name, field) in [("drift", spec.drift_field()), ("diffusion", spec.diffusion_field())] {
            let mut out = vec![f64::NAN; d];
            let outcome = catch_unwind(AssertUnwindSafe(|| field(x, *t, &mut out)));
            if let Err(payload) = outcome {
                let message = payload
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                report.push(Violation {
                    probe: i,
                    kind: ViolationKind::EvaluatorPanicked { field: name, message },
                });
                continue;
            }
            let written = out.iter().filter(|v| !v.is_nan()).count();
            if written < d {
                report.push(Violation {
                    probe: i,
                    kind: ViolationKind::WrongLength {
                        field: name,
                        written,
                        expected: d,
                    },
                });
                continue;
            }
            for (coord, &v) in out.iter().enumerate() {
                if !v.is_finite() {
                    report.push(Violation {
                        probe: i,
                        kind: ViolationKind::NonFinite { field: name, coord },
                    });
                } else if name == "diffusion" && v < 0.0 {
                    report.push(Violation {
                        probe: i,
                        kind: ViolationKind::NegativeDiffusion { coord, value: v },
                    });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PathOutcome {
    Completed(Vec<f64>),
    /// The state left the finite range at `step` (1-based).
    Diverged { step: usize, state: Vec<f64> },
}

impl PathOutcome {
    pub fn state(&self) -> &[f64] {
        match self {
            PathOutcome::Completed(x) => x,
            PathOutcome::Diverged { state, .. } => state,
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, PathOutcome::Diverged { .. })
    }
}

#[inline]
pub fn is_diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD)
}

/// Runs `cfg.n_steps` steps from `x0`. The observer sees `(k, t_k, x_k)`
/// after every step `k = 1..=N`; it is not called for the initial state.
pub fn simulate_path<S, O>(
    spec: &SdeSpec,
    stepper: &mut S,
    x0: &[f64],
    cfg: &StepConfig,
    rng: &mut RngStream,
    mut observer: O,
) -> Result<PathOutcome>
where
    S: Stepper + ?Sized,
    O: FnMut(usize, f64, &[f64]),
{
    if x0.len() != spec.dim() {
        return Err(LrwError::DimensionMismatch {
            expected: spec.dim(),
            got: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    for k in 0..cfg.n_steps {
        stepper.step(spec, &mut x, cfg.time_at(k), cfg.dt, rng);
        if is_diverged(&x) {
            return Ok(PathOutcome::Diverged { step: k + 1, state: x });
        }
        observer(k + 1, cfg.time_at(k + 1), &x);
    }
    Ok(PathOutcome::Completed(x))
}
