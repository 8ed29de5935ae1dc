//! Standard normal density and distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument `ln Φ` switches to the asymptotic tail expansion.
const TAIL_CUTOFF: f64 = -20.0;

/// φ(z)
#[inline]
pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// ln φ(z)
#[inline]
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Φ(z), via the complementary error function so both tails keep full
/// relative precision.
#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// ln Φ(z), finite for every finite `z`.
///
/// For `z < -20` Φ(z) is evaluated as φ(z)/|z| times the asymptotic series
/// `1 - 1/z² + 3/z⁴ - 15/z⁶ + …`, which stays representable long after Φ(z)
/// itself underflows.
pub fn ln_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z >= TAIL_CUTOFF {
        cdf(z).ln()
    } else {
        let inv_z2 = 1.0 / (z * z);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..=12 {
            term *= -((2 * n - 1) as f64) * inv_z2;
            sum += term;
        }
        ln_pdf(z) - (-z).ln() + sum.ln()
    }
}
