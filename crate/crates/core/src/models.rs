//! Test problems: multivariate Ornstein-Uhlenbeck, a Bayesian Poisson
//! random-effects posterior sampled with overdamped Langevin dynamics, and
//! a Gaussian data distribution whose flow score is known in closed form.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LrwError, Result};
use crate::rng::RngStream;
use crate::sde::{SdeSpec, VectorField};
use crate::transforms::NoiseSchedule;

/// `dx = -(A x - b) dt + √(2T) dW`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub temperature: f64,
}

#[derive(Clone, Debug)]
pub struct OuModel {
    pub spec: SdeSpec,
    pub stationary_mean: DVector<f64>,
    pub stationary_cov: DMatrix<f64>,
}

pub fn make_ou(p: &OuParams) -> Result<OuModel> {
    let d = p.b.len();
    if p.a.shape() != (d, d) {
        return Err(LrwError::DimensionMismatch {
            expected: d,
            got: p.a.nrows(),
        });
    }
    if !(p.temperature > 0.0) {
        return Err(LrwError::InvalidParameter(format!("temperature must be positive, got {}", p.temperature)));
    }
    let asym = (&p.a - p.a.transpose()).abs().max();
    if asym > 1e-12 {
        return Err(LrwError::NotPositiveDefinite(format!("A is not symmetric (max asymmetry {asym:e})")));
    }
    let chol = p
        .a
        .clone()
        .cholesky()
        .ok_or_else(|| LrwError::NotPositiveDefinite("Cholesky factorisation of A failed".into()))?;
    let stationary_mean = chol.solve(&p.b);
    let stationary_cov = chol.inverse() * p.temperature;

    // Row-major copy for the hot loop.
    let a: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| p.a[(i, j)]).collect();
    let b: Vec<f64> = p.b.iter().copied().collect();
    let noise = (2.0 * p.temperature).sqrt();
    let spec = SdeSpec::new(
        d,
        move |x, _, out| {
            for i in 0..d {
                let row = &a[i * d..(i + 1) * d];
                let ax: f64 = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
                out[i] = b[i] - ax;
            }
        },
        move |_, _, out| out.fill(noise),
    )?;
    Ok(OuModel {
        spec,
        stationary_mean,
        stationary_cov,
    })
}

/// `A = Z Zᵀ + I` with standard normal `Z`, and `b` standard normal.
/// `Z` is drawn row by row, then `b`.
pub fn sample_ou_params(d: usize, temperature: f64, rng: &mut RngStream) -> Result<OuParams> {
    if d == 0 {
        return Err(LrwError::InvalidParameter("dimension must be positive".into()));
    }
    let mut z = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            z[(i, j)] = rng.standard_normal();
        }
    }
    let b = DVector::from_fn(d, |_, _| rng.standard_normal());
    let mut a = &z * z.transpose() + DMatrix::identity(d, d);
    // Exact symmetry regardless of summation order.
    for i in 0..d {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    Ok(OuParams { a, b, temperature })
}

/// Poisson random-effects data and its true latent vector.
///
/// Coordinate 0 is the hierarchical mean (the interest parameter, prior
/// scale `sigma1`); coordinates `1..=d` are the random effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonModelParams {
    pub d: usize,
    pub j: usize,
    pub sigma1: f64,
    pub x_star: Vec<f64>,
    /// `d` rows of `j` counts.
    pub y: Vec<Vec<u64>>,
}

pub const POISSON_TRUE_MEAN: f64 = 5.0;

/// Largest Poisson rate accepted during data generation.
const MAX_POISSON_RATE: f64 = 1e9;

impl PoissonModelParams {
    fn count_sums(&self) -> Vec<f64> {
        self.y.iter().map(|row| row.iter().sum::<u64>() as f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.d + 1
    }

    /// `U(x)`, the negative log posterior up to a constant.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let sums = self.count_sums();
        let j = self.j as f64;
        let mu = x[0];
        let mut u = mu * mu / (2.0 * self.sigma1 * self.sigma1);
        for i in 1..=self.d {
            let xi = x[i];
            u += j * xi.exp() - sums[i - 1] * xi + 0.5 * (xi - mu) * (xi - mu);
        }
        u
    }

    pub fn grad_potential(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        grad_into(&self.count_sums(), self.j as f64, self.sigma1, x, &mut g);
        g
    }

    pub fn check(&self) -> Result<()> {
        if self.x_star.len() != self.d + 1 || self.y.len() != self.d || self.y.iter().any(|r| r.len() != self.j) {
            return Err(LrwError::InvalidParameter("Poisson model dimensions are inconsistent".into()));
        }
        if !(self.sigma1 > 0.0) {
            return Err(LrwError::InvalidParameter("sigma1 must be positive".into()));
        }
        Ok(())
    }

    /// Overdamped Langevin SDE `dx = -∇U dt + √2 dW`.
    pub fn langevin_spec(&self) -> Result<SdeSpec> {
        self.check()?;
        let sums = self.count_sums();
        let j = self.j as f64;
        let sigma1 = self.sigma1;
        SdeSpec::new(
            self.dim(),
            move |x, _, out| {
                grad_into(&sums, j, sigma1, x, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            },
            |_, _, out| out.fill(std::f64::consts::SQRT_2),
        )
    }
}

fn grad_into(sums: &[f64], j: f64, sigma1: f64, x: &[f64], out: &mut [f64]) {
    let mu = x[0];
    let mut pull = 0.0;
    for i in 1..x.len() {
        let xi = x[i];
        pull += xi - mu;
        out[i] = j * xi.exp() - sums[i - 1] + (xi - mu);
    }
    out[0] = -pull + mu / (sigma1 * sigma1);
}

/// Poisson draw by inversion of the CDF. The CDF is accumulated over a
/// window of ±(12√λ + 12) around `λ`; the mass outside it is far below the
/// resolution of `u`.
pub fn poisson_inverse(lambda: f64, u: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let spread = 12.0 * lambda.sqrt() + 12.0;
    let lo = (lambda - spread).floor().max(0.0) as u64;
    let hi = (lambda + spread).ceil() as u64;
    let ln_lambda = lambda.ln();
    let mut cdf = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        cdf += (kf * ln_lambda - lambda - ln_gamma(kf + 1.0)).exp();
        if u < cdf {
            return k;
        }
    }
    hi
}

/// Draws `x*` (hierarchical mean 5, effects `N(5, 1)`) and counts
/// `y_ij ~ Poisson(e^{x*_i})`. Normals are drawn first, then one uniform per
/// count in row order.
pub fn make_poisson_model(d: usize, j: usize, sigma1: f64, rng: &mut RngStream) -> Result<(PoissonModelParams, SdeSpec)> {
    if d == 0 || j == 0 {
        return Err(LrwError::InvalidParameter("d and J must be at least 1".into()));
    }
    if !(sigma1 > 0.0) {
        return Err(LrwError::InvalidParameter(format!("sigma1 must be positive, got {sigma1}")));
    }
    let mut x_star = Vec::with_capacity(d + 1);
    x_star.push(POISSON_TRUE_MEAN);
    for _ in 0..d {
        x_star.push(POISSON_TRUE_MEAN + rng.standard_normal());
    }
    let mut y = Vec::with_capacity(d);
    for &xi in &x_star[1..] {
        let rate = xi.exp();
        if !(rate.is_finite() && rate <= MAX_POISSON_RATE) {
            return Err(LrwError::Overflow(format!("Poisson rate e^{xi} is too large")));
        }
        y.push((0..j).map(|_| poisson_inverse(rate, rng.uniform())).collect());
    }
    let params = PoissonModelParams {
        d,
        j,
        sigma1,
        x_star,
        y,
    };
    let spec = params.langevin_spec()?;
    Ok((params, spec))
}

/// Score `s(x, t) = -x / (σ_data² + ς(t)²)` of Gaussian data `N(0, σ_data²)`
/// noised to level `ς(t)`.
pub fn make_gaussian_flow(sigma_data: f64, ns: &NoiseSchedule) -> Result<VectorField> {
    if !(sigma_data > 0.0) {
        return Err(LrwError::InvalidParameter(format!("sigma_data must be positive, got {sigma_data}")));
    }
    let sigma = ns.sigma.clone();
    let data_var = sigma_data * sigma_data;
    Ok(Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
        let s = sigma(t);
        let v = data_var + s * s;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi / v;
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ou() {
        let p = OuParams {
            a: DMatrix::identity(2, 2),
            b: DVector::zeros(2),
            temperature: 0.5,
        };
        let m = make_ou(&p).unwrap();
        assert_eq!(m.spec.drift(&[1.0, -2.0], 0.0), vec![-1.0, 2.0]);
        assert_eq!(m.spec.diffusion(&[0.0, 0.0], 0.0), vec![1.0, 1.0]);
        assert_eq!(m.stationary_mean, DVector::zeros(2));
        assert!((m.stationary_cov.clone() - DMatrix::identity(2, 2) * 0.5).abs().max() < 1e-15);
    }

    #[test]
    fn scalar_ou_stationary_law() {
        let p = OuParams {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DVector::from_element(1, 4.0),
            temperature: 0.5,
        };
        let m = make_ou(&p).unwrap();
        assert!((m.stationary_mean[0] - 2.0).abs() < 1e-15);
        assert!((m.stationary_cov[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn drift_vanishes_at_stationary_mean() {
        let mut rng = RngStream::new(3);
        let p = sample_ou_params(3, 0.5, &mut rng).unwrap();
        let m = make_ou(&p).unwrap();
        let f = m.spec.drift(m.stationary_mean.as_slice(), 0.0);
        assert!(f.iter().all(|v| v.abs() < 1e-12), "{f:?}");
    }

    #[test]
    fn sampled_a_is_symmetric_and_well_conditioned() {
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let p = sample_ou_params(3, 0.5, &mut rng).unwrap();
            assert_eq!((&p.a - p.a.transpose()).abs().max(), 0.0);
            let eig = p.a.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn singular_or_asymmetric_a_is_rejected() {
        let singular = OuParams {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            b: DVector::zeros(2),
            temperature: 0.5,
        };
        assert!(make_ou(&singular).is_err());
        let asym = OuParams {
            a: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]),
            b: DVector::zeros(2),
            temperature: 0.5,
        };
        assert!(make_ou(&asym).is_err());
    }

    #[test]
    fn poisson_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(51);
        let (params, spec) = make_poisson_model(51, 5, 10.0, &mut rng).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x: Vec<f64> = params.x_star.iter().map(|v| v + 0.5 * rng.standard_normal()).collect();
            let drift = spec.drift(&x, 0.0);
            for i in 0..x.len() {
                let h = 1e-5 * x[i].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (params.potential(&xp) - params.potential(&xm)) / (2.0 * h);
                let scale = fd.abs().max(drift[i].abs()).max(1.0);
                worst = worst.max((fd + drift[i]).abs() / scale);
            }
        }
        assert!(worst < 1e-6, "max relative error {worst:e}");
    }

    #[test]
    fn poisson_drift_is_not_globally_lipschitz() {
        let params = PoissonModelParams {
            d: 1,
            j: 5,
            sigma1: 10.0,
            x_star: vec![5.0, 5.0],
            y: vec![vec![0; 5]],
        };
        let spec = params.langevin_spec().unwrap();
        let at0 = spec.drift(&[0.0, 0.0], 0.0)[1].abs();
        let at20 = spec.drift(&[0.0, 20.0], 0.0)[1].abs();
        assert!(at20 > 1e7 * at0, "{at20} vs {at0}");
    }

    #[test]
    fn poisson_reference_setting_and_reproducibility() {
        let (a, spec) = make_poisson_model(51, 5, 10.0, &mut RngStream::new(9)).unwrap();
        let (b, _) = make_poisson_model(51, 5, 10.0, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(spec.dim(), 52);
        assert_eq!(a.y.len(), 51);
        assert!(a.y.iter().all(|r| r.len() == 5));
        assert_eq!(a.x_star[0], 5.0);
    }

    #[test]
    fn poisson_inversion_moments() {
        let mut rng = RngStream::new(77);
        for &lambda in &[0.5, 3.0, 150.0, 3000.0] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| poisson_inverse(lambda, rng.uniform()) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 5.0 * se, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {var}");
        }
        assert_eq!(poisson_inverse(0.0, 0.7), 0);
        // P[X = 0] = e^{-1} for lambda = 1.
        assert_eq!(poisson_inverse(1.0, 0.36), 0);
        assert_eq!(poisson_inverse(1.0, 0.37), 1);
    }

    #[test]
    fn gaussian_flow_score() {
        let ns = NoiseSchedule::new(|_| 1.0, |_| 1.0, |_| 0.0);
        let score = make_gaussian_flow(1.0, &ns).unwrap();
        let mut out = [0.0; 2];
        score(&[0.0, 2.0], 0.3, &mut out);
        assert_eq!(out, [0.0, -1.0]);
        assert!(make_gaussian_flow(0.0, &ns).is_err());
    }

    #[test]
    fn gaussian_flow_score_is_log_density_gradient() {
        let ns = NoiseSchedule::linear(0.2, 1.5);
        let sd = 0.8;
        let score = make_gaussian_flow(sd, &ns).unwrap();
        for &(x, t) in &[(0.3, 0.1), (-2.0, 0.6), (1.7, 0.95)] {
            let v = sd * sd + ns.sigma_at(t).powi(2);
            let log_p = |y: f64| -0.5 * y * y / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
            let h = 1e-5;
            let fd = (log_p(x + h) - log_p(x - h)) / (2.0 * h);
            let mut out = [0.0];
            score(&[x], t, &mut out);
            assert!((out[0] - fd).abs() < 1e-8, "{} vs {fd}", out[0]);
        }
    }
}
