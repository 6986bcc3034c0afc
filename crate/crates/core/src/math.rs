//! Thin wrappers over `libm` so the numeric code reads like std.

pub(crate) use core::f64::consts::PI;

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}
#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}
#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}
#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}
#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}
#[inline]
pub(crate) fn log10(x: f64) -> f64 {
    libm::log10(x)
}
#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}
#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}
#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        sin(px) / px
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn db_power(ratio: f64) -> f64 {
    10.0 * log10(ratio)
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
