//! Scalar special functions used by the Bernoulli and variational models.
//!
//! The logistic function squashes a dot product into a success probability,
//! while the digamma function (the logarithmic derivative of the gamma
//! function) and its inverse drive the variational updates.

use thiserror::Error;

/// Errors raised when an argument falls outside a function's domain.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MathError {
    #[error("digamma is undefined for x = {0} (requires x > 0)")]
    DigammaDomain(f64),
    #[error("no positive f64 has digamma equal to {0}")]
    InverseDigammaRange(f64),
}

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// B_{2n} / (2n) for n = 1..7, the coefficients of the asymptotic digamma
/// series in powers of 1/x².
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2n} for n = 1..7, the coefficients of the asymptotic trigamma series.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

const ASYMPTOTIC_FROM: f64 = 6.0;

/// Logistic function `1 / (1 + e^{-x})`.
///
/// Evaluated in a branch-stable form so that neither tail overflows.
///
/// ```
/// use cfmf::mathfns::sigmoid;
/// assert_eq!(sigmoid(0.0), 0.5);
/// assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
/// ```
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Digamma function ψ(x) = d/dx ln Γ(x) for x > 0.
///
/// Shifts the argument above 6 with ψ(x) = ψ(x+1) − 1/x, then sums a
/// seven-term asymptotic series. Absolute error stays below 1e−10 on
/// [1e−6, 1e6].
///
/// ```
/// use cfmf::mathfns::digamma;
/// let psi1 = digamma(1.0).unwrap();
/// assert!((psi1 + 0.5772156649015329).abs() < 1e-12);
/// assert!(digamma(0.0).is_err());
/// ```
pub fn digamma(x: f64) -> Result<f64, MathError> {
    if x > 0.0 && x.is_finite() {
        Ok(digamma_unchecked(x))
    } else {
        Err(MathError::DigammaDomain(x))
    }
}

/// Digamma without the domain check; callers guarantee `x > 0`.
#[inline]
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner over the series in 1/x².
    let mut tail = 0.0;
    for c in DIGAMMA_SERIES.iter().rev() {
        tail = (tail + c) * inv2;
    }
    shift + x.ln() - 0.5 / x - tail
}

/// Trigamma function ψ′(x) for x > 0, used by the Newton steps of
/// [`inverse_digamma`].
pub fn trigamma(mut x: f64) -> Result<f64, MathError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(MathError::DigammaDomain(x));
    }
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut tail = 0.0;
    for c in TRIGAMMA_SERIES.iter().rev() {
        tail = (tail + c) * inv2;
    }
    Ok(shift + inv + 0.5 * inv2 + tail * inv)
}

/// Inverse of the digamma function: the unique `x > 0` with ψ(x) = y.
///
/// Starts from Minka's initial guess and refines with Newton steps until
/// the update stalls. Fails only when the preimage is not representable
/// as a finite positive f64 (y above ψ(f64::MAX) ≈ 709.78).
///
/// ```
/// use cfmf::mathfns::{digamma, inverse_digamma};
/// let x = inverse_digamma(digamma(2.5).unwrap()).unwrap();
/// assert!((x - 2.5).abs() < 1e-8);
/// ```
pub fn inverse_digamma(y: f64) -> Result<f64, MathError> {
    if !y.is_finite() {
        return Err(MathError::InverseDigammaRange(y));
    }
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_MASCHERONI)
    };
    if !x.is_finite() {
        return Err(MathError::InverseDigammaRange(y));
    }
    for step in 0..64 {
        let slope = match trigamma(x) {
            Ok(s) if s.is_finite() => s,
            // 1/x² overflowed: x is already as small as f64 resolves.
            _ => break,
        };
        let delta = (digamma_unchecked(x) - y) / slope;
        let mut next = x - delta;
        if next <= 0.0 {
            // Newton overshot the pole at zero; halve towards it instead.
            next = x / 2.0;
        }
        let converged = (next - x).abs() <= 1e-15 * x.max(f64::MIN_POSITIVE);
        x = next;
        if step >= 5 && converged {
            break;
        }
    }
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(MathError::InverseDigammaRange(y))
    }
}
