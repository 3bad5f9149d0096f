//! Experiment configuration.
//!
//! A config file is a JSON object holding any subset of the fields of
//! [`ExperimentConfig`]; missing fields take the defaults of the chosen
//! subcommand and unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use lrw_core::PrecisionFormat;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    OuGrid,
    OuQuant,
    Poisson,
    Converge,
    Simulate,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::OuGrid => "ou-grid",
            Experiment::OuQuant => "ou-quant",
            Experiment::Poisson => "poisson",
            Experiment::Converge => "converge",
            Experiment::Simulate => "simulate",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Lrw,
    Em,
    TwoPoint,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Lrw => "lrw",
            Scheme::Em => "em",
            Scheme::TwoPoint => "two_point",
        }
    }
}

/// Arithmetic used for drift and diffusion evaluations. `fp64` leaves them
/// untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp64,
    Fp32,
    Fp16,
    Fp8,
}

impl Precision {
    pub fn name(&self) -> &'static str {
        match self {
            Precision::Fp64 => "fp64",
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Fp8 => "fp8",
        }
    }

    pub fn format(&self) -> Option<PrecisionFormat> {
        match self {
            Precision::Fp64 => None,
            other => Some(PrecisionFormat::from_str(other.name()).expect("known precision name")),
        }
    }
}

/// How `dx` is chosen. Multipliers scale the rule-of-thumb value
/// `√dt · σ_max` of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DxRule {
    RuleOfThumb,
    Multipliers { values: Vec<f64> },
}

impl DxRule {
    pub fn multipliers(&self) -> Vec<f64> {
        match self {
            DxRule::RuleOfThumb => vec![1.0],
            DxRule::Multipliers { values } => values.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub schemes: Vec<Scheme>,
    pub dt_grid: Vec<f64>,
    pub dx_rule: DxRule,
    pub precisions: Vec<Precision>,
    pub seeds: usize,
    pub base_seed: u64,
    pub steps: usize,
    pub burn_in: f64,
    /// Independent replicas per grid point (`converge`).
    pub replicas: usize,
    /// State dimension (OU) or number of random effects (Poisson).
    pub dim: usize,
    pub temperature: f64,
    /// Observations per random effect (Poisson).
    pub observations: usize,
    /// Prior scale of the hierarchical mean (Poisson).
    pub sigma1: f64,
    /// Terminal time (`converge`).
    pub horizon: f64,
    /// Initial value of every coordinate (`converge`, `simulate`, OU runs).
    pub x0: f64,
    /// Thinning of recorded states (`simulate`).
    pub record_every: usize,
    pub output: Option<PathBuf>,
}

/// `n` points from `lo` to `hi`, evenly spaced in `log10`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|k| if k + 1 == n { hi } else { 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64) })
        .collect()
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let ou_dt = log_grid(1e-3, 1e-1, 7);
        let base = Self {
            experiment,
            schemes: vec![Scheme::Lrw, Scheme::Em],
            dt_grid: ou_dt,
            dx_rule: DxRule::RuleOfThumb,
            precisions: vec![Precision::Fp64],
            seeds: 10,
            base_seed: 0,
            steps: 1_000_000,
            burn_in: 1.0 / 3.0,
            replicas: 1,
            dim: 3,
            temperature: 0.5,
            observations: 5,
            sigma1: 10.0,
            horizon: 1.0,
            x0: 0.0,
            record_every: 1,
            output: None,
        };
        match experiment {
            Experiment::OuGrid => Self {
                schemes: vec![Scheme::Lrw],
                dx_rule: DxRule::Multipliers {
                    values: vec![0.5, 0.75, 1.0, 1.5, 2.0, 4.0],
                },
                ..base
            },
            Experiment::OuQuant => Self {
                precisions: vec![Precision::Fp8, Precision::Fp16, Precision::Fp32],
                seeds: 50,
                ..base
            },
            Experiment::Poisson => Self {
                dt_grid: log_grid(1e-3, 0.5, 8),
                seeds: 100,
                steps: 50_000,
                burn_in: 0.0,
                dim: 51,
                ..base
            },
            Experiment::Converge => Self {
                dt_grid: vec![0.2, 0.1, 0.05, 0.025],
                seeds: 1,
                steps: 1,
                burn_in: 0.0,
                replicas: 1_000_000,
                dim: 1,
                x0: 1.0,
                ..base
            },
            Experiment::Simulate => Self {
                schemes: vec![Scheme::Lrw, Scheme::Em, Scheme::TwoPoint],
                dt_grid: vec![0.01],
                seeds: 1,
                steps: 1000,
                burn_in: 0.0,
                record_every: 10,
                ..base
            },
        }
    }

    /// Overlays a partial JSON config on the defaults of `experiment`.
    pub fn resolve(experiment: Experiment, text: Option<&str>) -> Result<Self, HarnessError> {
        let defaults = Self::defaults(experiment);
        let Some(text) = text else {
            return Ok(defaults);
        };
        let user: Value = serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(user) = user else {
            return Err(HarnessError::Config("config must be a JSON object".into()));
        };
        let Value::Object(mut merged) = serde_json::to_value(&defaults).expect("config serialises") else {
            unreachable!("config serialises to an object");
        };
        for (key, value) in user {
            if !merged.contains_key(&key) {
                return Err(HarnessError::Config(format!("unknown config key '{key}'")));
            }
            merged.insert(key, value);
        }
        let cfg: Self =
            serde_json::from_value(Value::Object(merged)).map_err(|e| HarnessError::Config(format!("invalid config: {e}")))?;
        if cfg.experiment != experiment {
            return Err(HarnessError::Config(format!(
                "config is for '{}' but the subcommand is '{experiment}'",
                cfg.experiment
            )));
        }
        Ok(cfg)
    }

    /// Multiplies step, seed and replica counts by `factor`, keeping each at
    /// least 1.
    pub fn scaled(mut self, factor: f64) -> Result<Self, HarnessError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(HarnessError::Config(format!("scale must be positive, got {factor}")));
        }
        let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        self.steps = scale(self.steps);
        self.seeds = scale(self.seeds);
        self.replicas = scale(self.replicas);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.schemes.is_empty() || self.dt_grid.is_empty() || self.precisions.is_empty() {
            return fail("schemes, dt_grid and precisions must be nonempty".into());
        }
        if let Some(dt) = self.dt_grid.iter().find(|&&dt| !(dt > 0.0 && dt.is_finite())) {
            return fail(format!("dt values must be positive, got {dt}"));
        }
        let mults = self.dx_rule.multipliers();
        if mults.is_empty() || mults.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return fail("dx multipliers must be a nonempty list of positive numbers".into());
        }
        if self.steps == 0 || self.seeds == 0 || self.replicas == 0 || self.dim == 0 || self.observations == 0 || self.record_every == 0 {
            return fail("steps, seeds, replicas, dim, observations and record_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return fail(format!("burn_in must lie in [0, 1), got {}", self.burn_in));
        }
        if !(self.temperature > 0.0 && self.sigma1 > 0.0 && self.horizon > 0.0) {
            return fail("temperature, sigma1 and horizon must be positive".into());
        }
        if !self.x0.is_finite() {
            return fail("x0 must be finite".into());
        }
        let exp = self.experiment;
        if exp != Experiment::OuQuant && self.precisions.len() != 1 {
            return fail(format!("'{exp}' takes exactly one precision"));
        }
        if exp != Experiment::OuGrid && mults.len() != 1 {
            return fail(format!("'{exp}' takes a single dx multiplier"));
        }
        if exp == Experiment::OuGrid && self.schemes != [Scheme::Lrw] {
            return fail("'ou-grid' runs the lrw scheme only".into());
        }
        if matches!(exp, Experiment::OuGrid | Experiment::OuQuant) {
            let kept = self.steps - (self.steps as f64 * self.burn_in).floor() as usize;
            if kept < self.dim + 1 {
                return fail(format!("{kept} post-burn-in samples cannot estimate a {}-dimensional covariance", self.dim));
            }
        }
        if exp == Experiment::Converge {
            for &dt in &self.dt_grid {
                let n = (self.horizon / dt).round();
                if n < 1.0 || (n * dt - self.horizon).abs() > 1e-9 * self.horizon {
                    return fail(format!("dt {dt} does not divide the horizon {}", self.horizon));
                }
            }
        }
        Ok(())
    }
}
