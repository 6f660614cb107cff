//! Standard normal density and distribution function.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

/// Arguments beyond this magnitude saturate.
pub const SATURATION: f64 = 12.0;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    if x.abs() > SATURATION {
        return 0.0;
    }
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

/// Standard normal CDF, evaluated through `erfc` so both tails keep relative accuracy.
pub fn cdf(x: f64) -> f64 {
    if x > SATURATION {
        1.0
    } else if x < -SATURATION {
        0.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}
