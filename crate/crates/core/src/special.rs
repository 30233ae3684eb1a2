//! Tetragamma function ψ''(x), the second derivative of the digamma function.

use crate::error::{Error, Result};

/// Below this point the argument is shifted up with the recurrence.
const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// Coefficients `−(2k+1)·B_{2k}` of `x^{−(2k+2)}` in the asymptotic series, k = 1..7.
const TETRAGAMMA_ASYMP: [f64; 7] = [
    -0.5,          // B2  = 1/6
    1.0 / 6.0,     // B4  = -1/30
    -1.0 / 6.0,    // B6  = 1/42
    0.3,           // B8  = -1/30
    -5.0 / 6.0,    // B10 = 5/66
    691.0 / 210.0, // B12 = -691/2730
    -35.0 / 2.0,   // B14 = 7/6
];

/// ψ''(x) for `x > 0`.
///
/// Shifts `x` above 10 with `ψ''(x) = ψ''(x+1) − 2/x³`, then evaluates
/// `ψ''(x) ≈ −1/x² − 1/x³ − Σ (2k+1)·B_{2k} / x^{2k+2}`, stopping once a term
/// drops below 1e-16 of the running value.
pub fn tetragamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "tetragamma needs a positive finite argument, got {x}"
        )));
    }
    let mut shift = 0.0;
    let mut t = x;
    while t < ASYMPTOTIC_THRESHOLD {
        shift += 2.0 / (t * t * t);
        t += 1.0;
    }

    let inv = 1.0 / t;
    let inv2 = inv * inv;
    let mut sum = -inv2 - inv2 * inv;
    let mut power = inv2 * inv2;
    for &c in &TETRAGAMMA_ASYMP {
        let term = c * power;
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        power *= inv2;
    }
    Ok(sum - shift)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive() {
        assert!(tetragamma(0.0).is_err());
        assert!(tetragamma(-1.5).is_err());
        assert!(tetragamma(f64::NAN).is_err());
    }

    #[test]
    fn negative_and_increasing() {
        let mut prev = tetragamma(0.01).unwrap();
        for i in 1..200 {
            let v = tetragamma(0.01 + i as f64 * 0.37).unwrap();
            assert!(v < 0.0 && v > prev);
            prev = v;
        }
    }

    #[test]
    fn small_argument_pole() {
        // ψ''(x) = −2/x³ + ψ''(1+x), and ψ''(1+x) → −2ζ(3) as x → 0
        let x = 1e-3;
        let v = tetragamma(x).unwrap();
        let expected = -2.0 / (x * x * x) + tetragamma(1.0 + x).unwrap();
        assert!(((v - expected) / expected).abs() < 1e-14);
    }
}
