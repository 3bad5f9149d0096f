//! Accuracy metrics used by the experiments.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{LrwError, Result};

/// Streaming mean and centred second-moment sum (Welford), with an optional
/// number of leading samples to discard.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    /// Row-major `dim × dim`.
    comoment: Vec<f64>,
    skip: u64,
    delta: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            skip: 0,
            delta: vec![0.0; dim],
        }
    }

    /// Discards the first `floor(total · burn_in_fraction)` pushed samples.
    pub fn with_burn_in(dim: usize, total: usize, burn_in_fraction: f64) -> Result<Self> {
        let mut acc = Self::new(dim);
        acc.skip = burn_in_count(total, burn_in_fraction)? as u64;
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        if self.skip > 0 {
            self.skip -= 1;
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.dim {
            self.delta[i] = x[i] - self.mean[i];
            self.mean[i] += self.delta[i] / n;
        }
        // C += (x - mean_old)(x - mean_new)ᵀ
        for i in 0..self.dim {
            let di = self.delta[i];
            let row = &mut self.comoment[i * self.dim..(i + 1) * self.dim];
            for j in 0..self.dim {
                row[j] += di * (x[j] - self.mean[j]);
            }
        }
    }

    /// Combines two accumulators as if their streams had been concatenated.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.dim, other.dim, "merging accumulators of different dimension");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.clone_from(&other.mean);
            self.comoment.clone_from(&other.comoment);
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.comoment[i * self.dim + j] += other.comoment[i * self.dim + j] + delta[i] * delta[j] * na * nb / n;
            }
            self.mean[i] += delta[i] * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased covariance; symmetrised.
    pub fn covariance(&self) -> DMatrix<f64> {
        let denom = (self.count.max(2) - 1) as f64;
        DMatrix::from_fn(self.dim, self.dim, |i, j| {
            0.5 * (self.comoment[i * self.dim + j] + self.comoment[j * self.dim + i]) / denom
        })
    }
}

fn burn_in_count(total: usize, fraction: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(LrwError::InvalidParameter(format!("burn-in fraction must be in [0, 1), got {fraction}")));
    }
    Ok((total as f64 * fraction).floor() as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Some coordinate had zero sample variance.
    pub singular: bool,
}

impl EmpiricalGaussian {
    pub fn from_accumulator(acc: &MomentAccumulator) -> Result<Self> {
        let needed = acc.dim() + 1;
        if (acc.count() as usize) < needed {
            return Err(LrwError::TooFewSamples {
                needed,
                have: acc.count() as usize,
            });
        }
        let cov = acc.covariance();
        let singular = (0..acc.dim()).any(|i| cov[(i, i)] <= 0.0);
        Ok(Self {
            mean: DVector::from_column_slice(acc.mean()),
            cov,
            singular,
        })
    }
}

/// Mean and unbiased covariance of the samples left after discarding the
/// leading `floor(n · burn_in_fraction)`.
pub fn empirical_gaussian(samples: &[Vec<f64>], burn_in_fraction: f64) -> Result<EmpiricalGaussian> {
    let dim = samples.first().map(Vec::len).ok_or(LrwError::TooFewSamples { needed: 1, have: 0 })?;
    let mut acc = MomentAccumulator::with_burn_in(dim, samples.len(), burn_in_fraction)?;
    for s in samples {
        if s.len() != dim {
            return Err(LrwError::DimensionMismatch {
                expected: dim,
                got: s.len(),
            });
        }
        acc.push(s);
    }
    EmpiricalGaussian::from_accumulator(&acc)
}

/// `KL[N(μ̂, Σ̂) ‖ N(μ, Σ)]`. Returns `+∞` when `Σ̂` is not positive definite.
pub fn gaussian_kl(mean_hat: &DVector<f64>, cov_hat: &DMatrix<f64>, mean_true: &DVector<f64>, cov_true: &DMatrix<f64>) -> Result<f64> {
    let d = mean_true.len();
    if mean_hat.len() != d || cov_hat.shape() != (d, d) || cov_true.shape() != (d, d) {
        return Err(LrwError::DimensionMismatch {
            expected: d,
            got: mean_hat.len(),
        });
    }
    let l_true = cov_true
        .clone()
        .cholesky()
        .ok_or_else(|| LrwError::NotPositiveDefinite("reference covariance".into()))?
        .unpack();
    let Some(l_hat) = cov_hat.clone().cholesky().map(|c| c.unpack()) else {
        return Ok(f64::INFINITY);
    };
    let m = l_true
        .solve_lower_triangular(&l_hat)
        .ok_or_else(|| LrwError::NotPositiveDefinite("reference covariance".into()))?;
    let trace = m.norm_squared();
    let w = l_true
        .solve_lower_triangular(&(mean_true - mean_hat))
        .ok_or_else(|| LrwError::NotPositiveDefinite("reference covariance".into()))?;
    let quad = w.norm_squared();
    let log_det_true: f64 = 2.0 * l_true.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_hat: f64 = 2.0 * l_hat.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace + quad - d as f64 + log_det_true - log_det_hat);
    Ok(if kl.is_nan() { f64::INFINITY } else { kl.max(0.0) })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MseOutcome {
    Value(f64),
    Exploded,
}

impl MseOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            MseOutcome::Value(v) => Some(*v),
            MseOutcome::Exploded => None,
        }
    }
}

/// `(time average − truth)²`; any non-finite sample marks the run exploded.
pub fn ergodic_mean_mse<I>(stream: I, truth: f64) -> Result<MseOutcome>
where
    I: IntoIterator<Item = f64>,
{
    let mut n = 0u64;
    let mut mean = 0.0;
    for v in stream {
        if !v.is_finite() {
            return Ok(MseOutcome::Exploded);
        }
        n += 1;
        mean += (v - mean) / n as f64;
    }
    if n == 0 {
        return Err(LrwError::TooFewSamples { needed: 1, have: 0 });
    }
    Ok(MseOutcome::Value((mean - truth) * (mean - truth)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakOrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Least-squares slope of `log error` against `log dt`.
pub fn weak_order_estimate(points: &[(f64, f64)]) -> Result<WeakOrderFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(dt, err)| *dt > 0.0 && *err > 0.0 && err.is_finite())
        .map(|(dt, err)| (dt.ln(), err.ln()))
        .collect();
    let excluded = points.len() - kept.len();
    if excluded > 0 {
        warn!("weak order fit: excluded {excluded} non-positive error value(s)");
    }
    if kept.len() < 3 {
        return Err(LrwError::TooFewSamples {
            needed: 3,
            have: kept.len(),
        });
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(LrwError::InvalidParameter("all step sizes are equal".into()));
    }
    let slope = sxy / sxx;
    Ok(WeakOrderFit {
        slope,
        intercept: my - slope * mx,
        used: kept.len(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn two_point_sample() {
        let g = empirical_gaussian(&[vec![0.0], vec![2.0]], 0.0).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.cov[(0, 0)], 2.0);
        assert!(!g.singular);
    }

    #[test]
    fn burn_in_keeps_last_two_thirds() {
        let samples: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let mut acc = MomentAccumulator::with_burn_in(1, 9, 1.0 / 3.0).unwrap();
        for s in &samples {
            acc.push(s);
        }
        assert_eq!(acc.count(), 6);
        assert_eq!(acc.mean()[0], 5.5);
        let g = empirical_gaussian(&samples, 1.0 / 3.0).unwrap();
        assert_eq!(g.mean[0], 5.5);
        assert!(MomentAccumulator::with_burn_in(1, 9, 1.0).is_err());
    }

    #[test]
    fn constant_samples_are_singular() {
        let samples = vec![vec![1.0, 2.0], vec![1.0, 3.0], vec![1.0, 4.0]];
        let g = empirical_gaussian(&samples, 0.0).unwrap();
        assert!(g.singular);
        let kl = gaussian_kl(&g.mean, &g.cov, &dv(&[0.0, 0.0]), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(kl, f64::INFINITY);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            empirical_gaussian(&[vec![0.0, 1.0], vec![1.0, 1.0]], 0.0),
            Err(LrwError::TooFewSamples { needed: 3, have: 2 })
        ));
    }

    #[test]
    fn kl_closed_forms() {
        let one = DMatrix::identity(1, 1);
        assert_eq!(gaussian_kl(&dv(&[0.3]), &one, &dv(&[0.3]), &one).unwrap(), 0.0);
        let kl = gaussian_kl(&dv(&[0.0]), &one, &dv(&[1.0]), &one).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
        let two = DMatrix::from_element(1, 1, 2.0);
        let kl = gaussian_kl(&dv(&[0.0]), &two, &dv(&[0.0]), &one).unwrap();
        assert!((kl - 0.5 * (2.0 - 1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((kl - 0.15343).abs() < 1e-5);
    }

    #[test]
    fn kl_rejects_singular_reference() {
        let z = DMatrix::zeros(1, 1);
        assert!(gaussian_kl(&dv(&[0.0]), &DMatrix::identity(1, 1), &dv(&[0.0]), &z).is_err());
    }

    #[test]
    fn merge_matches_concatenation() {
        let data: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, (0.3 * t).cos() + 0.01 * t]
            })
            .collect();
        let mut whole = MomentAccumulator::new(2);
        data.iter().for_each(|x| whole.push(x));
        let mut a = MomentAccumulator::new(2);
        let mut b = MomentAccumulator::new(2);
        data[..17].iter().for_each(|x| a.push(x));
        data[17..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), whole.count());
        for i in 0..2 {
            assert!((a.mean()[i] - whole.mean()[i]).abs() <= 8.0 * f64::EPSILON * whole.mean()[i].abs().max(1.0));
        }
        let (ca, cw) = (a.covariance(), whole.covariance());
        assert!((ca - &cw).abs().max() <= 8.0 * f64::EPSILON * cw.abs().max());
        let mut empty = MomentAccumulator::new(2);
        empty.merge(&whole);
        assert_eq!(empty.count(), whole.count());
    }

    #[test]
    fn ergodic_mse_examples() {
        assert_eq!(ergodic_mean_mse([5.0; 10], 5.0).unwrap(), MseOutcome::Value(0.0));
        assert_eq!(ergodic_mean_mse([4.0, 6.0], 5.0).unwrap(), MseOutcome::Value(0.0));
        assert_eq!(ergodic_mean_mse([4.0, 6.0], 4.0).unwrap(), MseOutcome::Value(1.0));
        assert_eq!(ergodic_mean_mse([4.0, f64::INFINITY], 4.0).unwrap(), MseOutcome::Exploded);
        assert!(ergodic_mean_mse(std::iter::empty(), 4.0).is_err());
    }

    #[test]
    fn synthetic_orders() {
        let dts = [0.2, 0.1, 0.05, 0.025];
        let lin: Vec<(f64, f64)> = dts.iter().map(|&h| (h, 3.0 * h)).collect();
        assert!((weak_order_estimate(&lin).unwrap().slope - 1.0).abs() < 1e-12);
        let quad: Vec<(f64, f64)> = dts.iter().map(|&h| (h, 0.5 * h * h)).collect();
        assert!((weak_order_estimate(&quad).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_errors_are_excluded() {
        let pts = [(0.2, 0.2), (0.1, 0.1), (0.05, 0.0), (0.025, 0.025), (0.0125, -1.0)];
        let fit = weak_order_estimate(&pts).unwrap();
        assert_eq!((fit.used, fit.excluded), (3, 2));
        assert!(weak_order_estimate(&[(0.1, 0.1), (0.05, 0.05), (0.01, 0.0)]).is_err());
    }
}
