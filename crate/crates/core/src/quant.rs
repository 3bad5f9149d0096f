//! Emulated reduced-precision floating point.
//!
//! Values are rounded to nearest, ties to even, into a binary format with the
//! given exponent and explicit mantissa widths. Subnormals are kept and
//! overflow saturates at the largest finite value.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LrwError, Result};
use crate::sde::SdeSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionFormat {
    pub name: String,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub max_finite: f64,
}

/// `2^k` for `-1074 <= k <= 1023`, built from the bit pattern.
fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

impl PrecisionFormat {
    /// IEEE-style format: the all-ones exponent is reserved for inf/NaN.
    pub fn ieee(name: &str, exponent_bits: u32, mantissa_bits: u32) -> Result<Self> {
        Self::check_widths(exponent_bits, mantissa_bits)?;
        let emax = (1i32 << (exponent_bits - 1)) - 1;
        let max_finite = (2.0 - pow2(-(mantissa_bits as i32))) * pow2(emax);
        Ok(Self {
            name: name.to_string(),
            exponent_bits,
            mantissa_bits,
            max_finite,
        })
    }

    /// "Finite" 8-bit style: the all-ones exponent holds normal values and
    /// only the all-ones mantissa there encodes NaN.
    pub fn finite_only(name: &str, exponent_bits: u32, mantissa_bits: u32) -> Result<Self> {
        Self::check_widths(exponent_bits, mantissa_bits)?;
        if mantissa_bits == 0 {
            return Err(LrwError::InvalidParameter("finite-only format needs a mantissa bit".into()));
        }
        let emax = 1i32 << (exponent_bits - 1);
        let max_finite = (2.0 - pow2(1 - mantissa_bits as i32)) * pow2(emax);
        Ok(Self {
            name: name.to_string(),
            exponent_bits,
            mantissa_bits,
            max_finite,
        })
    }

    fn check_widths(exponent_bits: u32, mantissa_bits: u32) -> Result<()> {
        if !(2..=11).contains(&exponent_bits) || mantissa_bits > 52 {
            return Err(LrwError::InvalidParameter(format!(
                "unsupported format widths e{exponent_bits}m{mantissa_bits}"
            )));
        }
        Ok(())
    }

    pub fn binary32() -> Self {
        Self::ieee("fp32", 8, 23).expect("valid widths")
    }

    pub fn binary16() -> Self {
        Self::ieee("fp16", 5, 10).expect("valid widths")
    }

    /// E4M3 with saturation, max 448.
    pub fn fp8_e4m3() -> Self {
        Self::finite_only("fp8", 4, 3).expect("valid widths")
    }

    fn bias(&self) -> i32 {
        (1i32 << (self.exponent_bits - 1)) - 1
    }

    /// Exponent of the smallest normal number.
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias()
    }

    pub fn min_positive_normal(&self) -> f64 {
        pow2(self.min_exponent())
    }

    pub fn min_positive_subnormal(&self) -> f64 {
        pow2(self.min_exponent() - self.mantissa_bits as i32)
    }
}

impl fmt::Display for PrecisionFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for PrecisionFormat {
    type Err = LrwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" | "binary32" => Ok(Self::binary32()),
            "fp16" | "binary16" => Ok(Self::binary16()),
            "fp8" | "e4m3" => Ok(Self::fp8_e4m3()),
            other => Err(LrwError::InvalidParameter(format!("unknown precision '{other}'"))),
        }
    }
}

/// Rounds `v` into `fmt`.
pub fn quantise_value(v: f64, fmt: &PrecisionFormat) -> Result<f64> {
    if !v.is_finite() {
        return Err(LrwError::NonFinite(v));
    }
    Ok(quantise_finite(v, fmt))
}

#[inline]
fn quantise_finite(v: f64, fmt: &PrecisionFormat) -> f64 {
    if v == 0.0 {
        return v;
    }
    let a = v.abs();
    let exponent = if a >= fmt.min_positive_normal() {
        ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
    } else {
        fmt.min_exponent()
    };
    let quantum = pow2(exponent - fmt.mantissa_bits as i32);
    let rounded = ((a / quantum).round_ties_even() * quantum).min(fmt.max_finite);
    rounded.copysign(v)
}

/// Wraps drift and diffusion so every output coordinate is rounded into
/// `fmt`. Non-finite outputs pass through unchanged, which lets the path
/// driver record a divergence instead of failing mid-step.
pub fn quantise_spec(spec: &SdeSpec, fmt: &PrecisionFormat) -> SdeSpec {
    let wrap = |inner: crate::sde::VectorField| -> crate::sde::VectorField {
        let fmt = fmt.clone();
        Arc::new(move |x: &[f64], t: f64, out: &mut [f64]| {
            inner(x, t, out);
            for v in out.iter_mut() {
                if v.is_finite() {
                    *v = quantise_finite(*v, &fmt);
                }
            }
        })
    };
    SdeSpec::from_fields(
        spec.dim(),
        wrap(spec.drift_field().clone()),
        wrap(spec.diffusion_field().clone()),
    )
    .expect("dimension already validated")
}
