//! Digamma, trigamma and log-gamma for positive real arguments.
//!
//! All three shift the argument upward with the functional recurrence until
//! it reaches [`ASYMPTOTIC_THRESHOLD`], then evaluate a truncated
//! Stirling-type series in `1/x`.

use crate::error::{Error, Result};

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// B_{2k} / (2k) for k = 1..=7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..=7.
const BERNOULLI_EVEN: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// B_{2k} / (2k (2k - 1)) for k = 1..=7.
const LGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

fn check_domain(name: &str, x: f64) -> Result<()> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::Domain(format!("{name} requires x > 0, got {x}")));
    }
    if x.is_infinite() {
        return Err(Error::Domain(format!("{name} requires finite x")));
    }
    Ok(())
}

/// ψ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner over 1/x^2, highest order first.
    let mut series = 0.0;
    for c in DIGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    shift + x.ln() - 0.5 / x - series * inv2
}

/// ψ′(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for b in BERNOULLI_EVEN.iter().rev() {
        series = series * inv2 + b;
    }
    shift + inv + 0.5 * inv2 + series * inv2 * inv
}

/// ln Γ(x) for x > 0.
pub fn lgamma(x: f64) -> Result<f64> {
    check_domain("lgamma", x)?;
    Ok(lgamma_unchecked(x))
}

pub(crate) fn lgamma_unchecked(mut x: f64) -> f64 {
    let mut product = 1.0;
    while x < ASYMPTOTIC_THRESHOLD {
        product *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in LGAMMA_SERIES.iter().rev() {
        series = series * inv2 + c;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series * inv - product.ln()
}
