//! Lattice random walk (LRW) discretisation of stochastic differential
//! equations with diagonal diffusion, together with Euler-Maruyama and
//! two-point baselines, reduced-precision emulation, SDE transforms, test
//! models and accuracy metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod lrw;
pub mod metrics;
pub mod models;
pub mod quant;
pub mod rng;
pub mod sde;
pub mod transforms;

pub use baseline::{em_step, two_point_step, EmStepper, TwoPointStepper};
pub use error::{LrwError, Result};
pub use lrw::{
    allowable_dx_range, check_feasibility, lrw_step, lrw_step_lattice, make_lrw_stepper, rule_of_thumb_dx, ternary_probs,
    DxSchedule, LatticeState, LrwStepper, TernaryProbs,
};
pub use metrics::{empirical_gaussian, ergodic_mean_mse, gaussian_kl, weak_order_estimate, MomentAccumulator, MseOutcome};
pub use quant::{quantise_spec, quantise_value, PrecisionFormat};
pub use rng::{standard_normal, RngStream};
pub use sde::{simulate_path, validate_spec, PathOutcome, SdeSpec, StepConfig, Stepper};
pub use transforms::{flow_to_sde, lamperti_transform, velocity_to_score, Lamperti, NoiseSchedule, TimeDiffusion};
