//! Standard normal helpers. The complementary error function comes from
//! `libm` (correctly rounded to within an ulp or so); `statrs` supplies the
//! inverse, which is polished by one Newton step.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `P(Z > z)`, accurate far into the right tail.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn norm_quantile(u: f64) -> f64 {
    let z = -SQRT_2 * erfc_inv(2.0 * u);
    if !z.is_finite() {
        return z;
    }
    let pdf = norm_pdf(z);
    if pdf < 1e-300 {
        return z;
    }
    // Work on the smaller tail so the residual keeps its relative precision.
    let step = if u < 0.5 { (norm_cdf(z) - u) / pdf } else { (u - 1.0 + norm_sf(z)) / pdf };
    z - step
}

/// Antiderivative of the standard normal upper tail: `d/dz G(z) = P(Z > z)`.
pub fn norm_sf_antiderivative(z: f64) -> f64 {
    if z == f64::INFINITY {
        return 0.0;
    }
    z * norm_sf(z) - norm_pdf(z)
}
