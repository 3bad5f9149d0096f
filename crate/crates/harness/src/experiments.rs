//! The experiment runners behind each subcommand.
//!
//! Every (grid point, seed) task draws from streams keyed only by the base
//! seed and the seed index: model parameters from replica `2·seed` and the
//! trajectory from replica `2·seed + 1`. Schemes, precisions and step sizes
//! therefore share random numbers, and results do not depend on the number
//! of worker threads.

use log::{info, warn};
use lrw_core::lrw::LrwStepper;
use lrw_core::metrics::EmpiricalGaussian;
use lrw_core::models::{make_ou, make_poisson_model, sample_ou_params, OuModel, OuParams, PoissonModelParams, POISSON_TRUE_MEAN};
use lrw_core::{
    ergodic_mean_mse, gaussian_kl, make_lrw_stepper, quantise_spec, simulate_path, weak_order_estimate, DxSchedule, EmStepper,
    LrwError, MomentAccumulator, MseOutcome, PathOutcome, RngStream, SdeSpec, StepConfig, Stepper, TwoPointStepper,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig, Precision, Scheme};
use crate::error::HarnessError;

/// Replicas per parallel work item in `converge`.
const CONVERGE_CHUNK: usize = 8192;

/// Attempts at drawing Poisson data before giving up on a seed.
const POISSON_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: Table,
    pub summary: Value,
}

pub fn header(experiment: Experiment) -> Vec<&'static str> {
    match experiment {
        Experiment::OuGrid => vec!["dt", "dx", "seed", "kl", "clipped_fraction"],
        Experiment::OuQuant => vec!["scheme", "precision", "dt", "seed", "kl"],
        Experiment::Poisson => vec!["scheme", "dt", "seed", "mse", "exploded"],
        Experiment::Converge => vec!["scheme", "dt", "estimate", "exact", "error", "std_error"],
        Experiment::Simulate => vec!["scheme", "dt", "seed", "step", "t", "coord", "value"],
    }
}

/// Shortest round-trip decimal, with `inf` for `+∞`.
pub fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

const EXPLODED: &str = "exploded";

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::OuGrid => run_ou_grid(cfg),
        Experiment::OuQuant => run_ou_quant(cfg),
        Experiment::Poisson => run_poisson(cfg),
        Experiment::Converge => run_convergence(cfg),
        Experiment::Simulate => run_simulate(cfg),
    }
}

fn param_rng(cfg: &ExperimentConfig, seed: usize) -> RngStream {
    RngStream::for_replica(cfg.base_seed, 2 * seed as u64)
}

fn path_rng(cfg: &ExperimentConfig, seed: usize) -> RngStream {
    RngStream::for_replica(cfg.base_seed, 2 * seed as u64 + 1)
}

fn with_precision(spec: &SdeSpec, precision: Precision) -> SdeSpec {
    match precision.format() {
        Some(fmt) => quantise_spec(spec, &fmt),
        None => spec.clone(),
    }
}

fn lrw(dx: f64, dim: usize) -> Result<LrwStepper, LrwError> {
    make_lrw_stepper(DxSchedule::Constant(vec![dx; dim]))
}

fn stepper(scheme: Scheme, dx: f64, dim: usize) -> Result<Box<dyn Stepper>, LrwError> {
    Ok(match scheme {
        Scheme::Lrw => Box::new(lrw(dx, dim)?),
        Scheme::Em => Box::new(EmStepper::default()),
        Scheme::TwoPoint => Box::new(TwoPointStepper::default()),
    })
}

fn ou_model(cfg: &ExperimentConfig, seed: usize) -> Result<(OuParams, OuModel), LrwError> {
    let params = sample_ou_params(cfg.dim, cfg.temperature, &mut param_rng(cfg, seed))?;
    let model = make_ou(&params)?;
    Ok((params, model))
}

/// KL from the post-burn-in empirical Gaussian to the stationary law, or
/// `None` when the trajectory diverged.
fn ou_kl(cfg: &ExperimentConfig, model: &OuModel, spec: &SdeSpec, stepper: &mut dyn Stepper, dt: f64, seed: usize) -> Result<Option<f64>, LrwError> {
    let d = cfg.dim;
    let mut acc = MomentAccumulator::with_burn_in(d, cfg.steps, cfg.burn_in)?;
    let steps = StepConfig::new(dt, cfg.steps)?;
    let out = simulate_path(spec, stepper, &vec![cfg.x0; d], &steps, &mut path_rng(cfg, seed), |_, _, x| acc.push(x))?;
    if out.is_diverged() {
        return Ok(None);
    }
    let g = EmpiricalGaussian::from_accumulator(&acc)?;
    if g.singular {
        return Ok(Some(f64::INFINITY));
    }
    gaussian_kl(&g.mean, &g.cov, &model.stationary_mean, &model.stationary_cov).map(Some)
}

fn kl_token(kl: Option<f64>) -> String {
    kl.map_or_else(|| EXPLODED.to_string(), fmt_num)
}

/// Rule-of-thumb `dx` of the OU model, whose diffusion is `√(2𝒯)` everywhere.
fn ou_dx(cfg: &ExperimentConfig, dt: f64, multiplier: f64) -> f64 {
    multiplier * (2.0 * dt * cfg.temperature).sqrt()
}

fn ou_models(cfg: &ExperimentConfig) -> Result<Vec<(OuModel, SdeSpec)>, LrwError> {
    (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| {
            let (_, model) = ou_model(cfg, seed)?;
            let spec = with_precision(&model.spec, cfg.precisions[0]);
            Ok((model, spec))
        })
        .collect()
}

pub fn run_ou_grid(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let models = ou_models(cfg)?;
    let mut tasks = Vec::new();
    for &dt in &cfg.dt_grid {
        for m in cfg.dx_rule.multipliers() {
            for seed in 0..cfg.seeds {
                tasks.push((dt, ou_dx(cfg, dt, m), seed));
            }
        }
    }
    info!("ou-grid: {} runs of {} steps", tasks.len(), cfg.steps);
    let rows = tasks
        .par_iter()
        .map(|&(dt, dx, seed)| {
            let (model, spec) = &models[seed];
            let mut stepper = lrw(dx, cfg.dim)?;
            let kl = ou_kl(cfg, model, spec, &mut stepper, dt, seed)?;
            Ok(vec![fmt_num(dt), fmt_num(dx), seed.to_string(), kl_token(kl), fmt_num(stepper.clipped_fraction())])
        })
        .collect::<Result<Vec<_>, LrwError>>()?;
    Ok(RunOutput {
        table: Table {
            header: header(Experiment::OuGrid),
            rows,
        },
        summary: json!({}),
    })
}

pub fn run_ou_quant(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let models = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| ou_model(cfg, seed).map(|(_, m)| m))
        .collect::<Result<Vec<_>, LrwError>>()?;
    let mut tasks = Vec::new();
    for &scheme in &cfg.schemes {
        for &precision in &cfg.precisions {
            for &dt in &cfg.dt_grid {
                for seed in 0..cfg.seeds {
                    tasks.push((scheme, precision, dt, seed));
                }
            }
        }
    }
    info!("ou-quant: {} runs of {} steps", tasks.len(), cfg.steps);
    let m = cfg.dx_rule.multipliers()[0];
    let rows = tasks
        .par_iter()
        .map(|&(scheme, precision, dt, seed)| {
            let model = &models[seed];
            let spec = with_precision(&model.spec, precision);
            let mut stepper = stepper(scheme, ou_dx(cfg, dt, m), cfg.dim)?;
            let kl = ou_kl(cfg, model, &spec, stepper.as_mut(), dt, seed)?;
            Ok(vec![scheme.name().into(), precision.name().into(), fmt_num(dt), seed.to_string(), kl_token(kl)])
        })
        .collect::<Result<Vec<_>, LrwError>>()?;
    Ok(RunOutput {
        table: Table {
            header: header(Experiment::OuQuant),
            rows,
        },
        summary: json!({}),
    })
}

fn poisson_model(cfg: &ExperimentConfig, seed: usize) -> Result<(PoissonModelParams, SdeSpec), LrwError> {
    let mut rng = param_rng(cfg, seed);
    let mut last = None;
    for attempt in 0..POISSON_ATTEMPTS {
        match make_poisson_model(cfg.dim, cfg.observations, cfg.sigma1, &mut rng) {
            Ok(built) => return Ok(built),
            Err(e @ LrwError::Overflow(_)) => {
                warn!("seed {seed}: {e}; regenerating data (attempt {})", attempt + 1);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

pub fn run_poisson(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let models = (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| {
            let (params, spec) = poisson_model(cfg, seed)?;
            Ok((params, with_precision(&spec, cfg.precisions[0])))
        })
        .collect::<Result<Vec<_>, LrwError>>()?;
    let mut tasks = Vec::new();
    for &scheme in &cfg.schemes {
        for &dt in &cfg.dt_grid {
            for seed in 0..cfg.seeds {
                tasks.push((scheme, dt, seed));
            }
        }
    }
    info!("poisson: {} runs of {} steps", tasks.len(), cfg.steps);
    let m = cfg.dx_rule.multipliers()[0];
    let dim = cfg.dim + 1;
    let rows = tasks
        .par_iter()
        .map(|&(scheme, dt, seed)| {
            let (params, spec) = &models[seed];
            // The Langevin diffusion is √2 in every coordinate.
            let mut stepper = stepper(scheme, m * (2.0 * dt).sqrt(), dim)?;
            let steps = StepConfig::new(dt, cfg.steps)?;
            let mut interest = Vec::with_capacity(cfg.steps);
            let out = simulate_path(spec, stepper.as_mut(), &params.x_star, &steps, &mut path_rng(cfg, seed), |_, _, x| {
                interest.push(x[0])
            })?;
            let mse = match out {
                PathOutcome::Diverged { .. } => MseOutcome::Exploded,
                PathOutcome::Completed(_) => ergodic_mean_mse(interest, POISSON_TRUE_MEAN)?,
            };
            let (mse, exploded) = match mse {
                MseOutcome::Value(v) => (fmt_num(v), false),
                MseOutcome::Exploded => (EXPLODED.to_string(), true),
            };
            Ok(vec![scheme.name().into(), fmt_num(dt), seed.to_string(), mse, exploded.to_string()])
        })
        .collect::<Result<Vec<_>, LrwError>>()?;
    Ok(RunOutput {
        table: Table {
            header: header(Experiment::Poisson),
            rows,
        },
        summary: json!({}),
    })
}

/// The 1-d OU process `dx = -x dt + dW` used by the convergence study.
fn converge_spec(cfg: &ExperimentConfig) -> Result<SdeSpec, LrwError> {
    let spec = make_ou(&OuParams {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DVector::from_element(1, 0.0),
        temperature: cfg.temperature,
    })?
    .spec;
    Ok(with_precision(&spec, cfg.precisions[0]))
}

/// `E[cos X_T]` for `X_T ~ N(x0 e^{-T}, 𝒯(1 - e^{-2T}))`.
pub fn exact_cos_expectation(x0: f64, horizon: f64, temperature: f64) -> f64 {
    let mean = x0 * (-horizon).exp();
    let var = temperature * (1.0 - (-2.0 * horizon).exp());
    mean.cos() * (-var / 2.0).exp()
}

/// Sum and sum of squares of `cos X_T` over replicas `range`.
fn cos_moments(
    cfg: &ExperimentConfig,
    spec: &SdeSpec,
    scheme: Scheme,
    dt: f64,
    range: std::ops::Range<usize>,
) -> Result<(f64, f64), LrwError> {
    let n = (cfg.horizon / dt).round() as usize;
    let dx = cfg.dx_rule.multipliers()[0] * dt.sqrt() * (2.0 * cfg.temperature).sqrt();
    let mut stepper = stepper(scheme, dx, 1)?;
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in range {
        let mut rng = RngStream::for_replica(cfg.base_seed, r as u64);
        let mut x = [cfg.x0];
        for k in 0..n {
            stepper.step(spec, &mut x, k as f64 * dt, dt, &mut rng);
        }
        if !x[0].is_finite() {
            return Err(LrwError::NonFinite(x[0]));
        }
        let c = x[0].cos();
        s1 += c;
        s2 += c * c;
    }
    Ok((s1, s2))
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let spec = converge_spec(cfg)?;
    let exact = exact_cos_expectation(cfg.x0, cfg.horizon, cfg.temperature);
    let chunks: Vec<_> = (0..cfg.replicas)
        .step_by(CONVERGE_CHUNK)
        .map(|lo| lo..(lo + CONVERGE_CHUNK).min(cfg.replicas))
        .collect();
    let n = cfg.replicas as f64;
    let mut rows = Vec::new();
    let mut slopes = serde_json::Map::new();
    for &scheme in &cfg.schemes {
        let mut points = Vec::new();
        for &dt in &cfg.dt_grid {
            let parts = chunks
                .par_iter()
                .map(|range| cos_moments(cfg, &spec, scheme, dt, range.clone()))
                .collect::<Result<Vec<_>, LrwError>>()?;
            let (s1, s2) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            let mean = s1 / n;
            let se = if cfg.replicas > 1 {
                ((s2 - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
            } else {
                f64::INFINITY
            };
            let error = (mean - exact).abs();
            points.push((dt, error));
            rows.push(vec![scheme.name().into(), fmt_num(dt), fmt_num(mean), fmt_num(exact), fmt_num(error), fmt_num(se)]);
        }
        let slope = match weak_order_estimate(&points) {
            Ok(fit) => {
                info!("{}: fitted weak order {:.3}", scheme.name(), fit.slope);
                json!(fit.slope)
            }
            Err(e) => {
                warn!("{}: no weak order fit ({e})", scheme.name());
                Value::Null
            }
        };
        slopes.insert(scheme.name().into(), slope);
    }
    Ok(RunOutput {
        table: Table {
            header: header(Experiment::Converge),
            rows,
        },
        summary: json!({ "slopes": slopes }),
    })
}

pub fn run_simulate(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let models = ou_models(cfg)?;
    let mut tasks = Vec::new();
    for &scheme in &cfg.schemes {
        for &dt in &cfg.dt_grid {
            for seed in 0..cfg.seeds {
                tasks.push((scheme, dt, seed));
            }
        }
    }
    let m = cfg.dx_rule.multipliers()[0];
    let blocks = tasks
        .par_iter()
        .map(|&(scheme, dt, seed)| {
            let (_, spec) = &models[seed];
            let mut stepper = stepper(scheme, ou_dx(cfg, dt, m), cfg.dim)?;
            let steps = StepConfig::new(dt, cfg.steps)?;
            let prefix = [scheme.name().to_string(), fmt_num(dt), seed.to_string()];
            let mut rows = Vec::new();
            let mut record = |k: usize, t: f64, x: &[f64]| {
                for (i, v) in x.iter().enumerate() {
                    let mut row = prefix.to_vec();
                    row.extend([k.to_string(), fmt_num(t), i.to_string(), fmt_num(*v)]);
                    rows.push(row);
                }
            };
            let x0 = vec![cfg.x0; cfg.dim];
            record(0, steps.time_at(0), &x0);
            let out = simulate_path(spec, stepper.as_mut(), &x0, &steps, &mut path_rng(cfg, seed), |k, t, x| {
                if k % cfg.record_every == 0 {
                    record(k, t, x)
                }
            })?;
            if let PathOutcome::Diverged { step, .. } = out {
                for i in 0..cfg.dim {
                    let mut row = prefix.to_vec();
                    row.extend([step.to_string(), fmt_num(steps.time_at(step)), i.to_string(), EXPLODED.into()]);
                    rows.push(row);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, LrwError>>()?;
    Ok(RunOutput {
        table: Table {
            header: header(Experiment::Simulate),
            rows: blocks.into_iter().flatten().collect(),
        },
        summary: json!({}),
    })
}
