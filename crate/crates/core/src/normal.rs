//! Standard normal density, distribution function and quantile function.
//!
//! Everything here is `f64`, even when the tensors being quantized are `f32`:
//! grids are built once and their accuracy bounds the accuracy of the codec.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 / sqrt(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Probability(p))
        } else {
            Err(Error::domain(format!("probability {p} is outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "expected a finite argument, got {x}"
        )))
    }
}

/// Density of N(0, 1).
pub fn std_normal_pdf(x: f64) -> Result<f64> {
    check_finite(x)?;
    Ok(pdf(x))
}

/// Distribution function of N(0, 1).
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    check_finite(x)?;
    Ok(Probability(cdf(x)))
}

/// Quantile function of N(0, 1) for `0 < p < 1`.
///
/// The endpoints map to infinities and are rejected; grids carry their
/// unbounded outer boundaries explicitly instead.
pub fn std_normal_inv_cdf(p: Probability) -> Result<f64> {
    let p = p.value();
    if p <= 0.0 || p >= 1.0 {
        return Err(Error::domain(format!(
            "inverse cdf needs 0 < p < 1, got {p}"
        )));
    }
    Ok(inv_cdf(p))
}

#[inline]
pub(crate) fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub(crate) fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub(crate) fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

// Rational approximation (P. J. Acklam), relative error about 1.15e-9.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn acklam_lower_half(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Quantile for `p` in `(0, 1/2]`, refined by one Newton step on the lower tail.
fn inv_cdf_lower_half(p: f64) -> f64 {
    let x = acklam_lower_half(p);
    let density = pdf(x);
    if density == 0.0 {
        return x;
    }
    x - (cdf(x) - p) / density
}

pub(crate) fn inv_cdf(p: f64) -> f64 {
    if p == 0.5 {
        0.0
    } else if p < 0.5 {
        inv_cdf_lower_half(p)
    } else {
        // 1 - p is exact for p in [0.5, 1)
        -inv_cdf_lower_half(1.0 - p)
    }
}

/// `sqrt(2 / π)`, the conditional mean of |ξ| for ξ ~ N(0, 1).
pub fn half_normal_mean() -> f64 {
    (2.0 / PI).sqrt()
}
