//! Closed-form expectations for a model trained on a mixture of two report
//! distributions sharing the same feature marginal.
//!
//! `Q` initialization points come from distribution 1 and `x` reports from
//! distribution 2. Because the least-squares solution is linear in `y`, the
//! expected model is the count-weighted average of the two distributions'
//! models, and its expected risk on distribution 2 is
//! `R(x) = Q²r/(Q+x)² + R₂₂` with `r = E[(M₂ − M₁)²]`.

use crate::error::{Error, Result};
use crate::special::tetragamma;

/// Inputs of the closed-form theory.
///
/// Counts are kept as reals since the formulas are smooth in all of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    /// Initialization points.
    pub q: f64,
    /// Collected points.
    pub n: f64,
    /// Batch size.
    pub b: f64,
    /// Expected squared gap between the two distributions' models.
    pub r: f64,
    /// Inherent risk of distribution 1 (heuristic reports).
    pub r11: f64,
    /// Inherent risk of distribution 2 (truthful reports).
    pub r22: f64,
    /// Truthful fraction.
    pub p: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        MixtureParams {
            q: 500.0,
            n: 1500.0,
            b: 1.0,
            r: 1.0,
            r11: 0.0,
            r22: 0.0,
            p: 1.0,
        }
    }
}

impl MixtureParams {
    pub fn batch(q: f64, n: f64, b: f64) -> Self {
        MixtureParams {
            q,
            n,
            b,
            ..MixtureParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("Q", self.q),
            ("n", self.n),
            ("b", self.b),
            ("r", self.r),
            ("R11", self.r11),
            ("R22", self.r22),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Domain(format!(
                "p must lie in [0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }

    /// `R(x) = Q²r/(Q+x)² + R₂₂`.
    pub fn expected_risk(&self, x: f64) -> f64 {
        let ratio = self.q / (self.q + x);
        ratio * ratio * self.r + self.r22
    }

    /// `−R'(x) = 2Q²r/(Q+x)³`: expected influence of the point arriving after `x` others.
    pub fn marginal_influence(&self, x: f64) -> f64 {
        let s = self.q + x;
        2.0 * self.q * self.q * self.r / (s * s * s)
    }

    /// `ΔR = R(0) − R(n) = r·n(2Q+n)/(Q+n)²`.
    pub fn total_risk_change(&self) -> f64 {
        let s = self.q + self.n;
        self.r * self.n * (2.0 * self.q + self.n) / (s * s)
    }

    /// `S(k) = 2bQ²r/(Q+kb)³`, the continuum estimate of batch `k`'s influence sum.
    pub fn batch_sum(&self, k: f64) -> f64 {
        let s = self.q + k * self.b;
        2.0 * self.b * self.q * self.q * self.r / (s * s * s)
    }

    fn ratio_prefactor(&self) -> Result<f64> {
        if !(self.q > 0.0 && self.n > 0.0 && self.b > 0.0) {
            return Err(Error::Domain(format!(
                "correction ratios need Q, n, b > 0 (Q={}, n={}, b={})",
                self.q, self.n, self.b
            )));
        }
        let s = self.q + self.n;
        Ok(self.q * self.q * s * s / (self.n * (2.0 * self.q + self.n) * self.b * self.b))
    }

    /// `D_inc(b) = S_inc/ΔR`, batch model includes the scored batch.
    pub fn d_inclusive(&self) -> Result<f64> {
        let pre = self.ratio_prefactor()?;
        let hi = tetragamma((self.q + self.n) / self.b + 1.0)?;
        let lo = tetragamma(self.q / self.b + 1.0)?;
        Ok(pre * (hi - lo))
    }

    /// `D_exc(b) = S_exc/ΔR`, batch model excludes the scored batch.
    pub fn d_exclusive(&self) -> Result<f64> {
        let pre = self.ratio_prefactor()?;
        let hi = tetragamma((self.q + self.n) / self.b)?;
        let lo = tetragamma(self.q / self.b)?;
        Ok(pre * (hi - lo))
    }

    /// Expected (heuristic, truthful) influence when the test set is drawn
    /// independently from the truthful distribution.
    pub fn heuristic_influences_independent(&self) -> (f64, f64) {
        let (p, r, n) = (self.p, self.r, self.n);
        (
            -2.0 * r * p * (1.0 - p) / n,
            2.0 * r * (1.0 - p) * (1.0 - p) / n,
        )
    }

    /// Expected (heuristic, truthful) influence when the test set is the pool
    /// of reports itself: `−∂R_cc/∂x₁` and `−∂R_cc/∂x₂` for
    /// `R_cc = (1−p)(R₁₁ + p²r) + p(R₂₂ + (1−p)²r)`.
    pub fn heuristic_influences_mixed(&self) -> (f64, f64) {
        let (p, r, n) = (self.p, self.r, self.n);
        let gap = self.r22 - self.r11;
        let heuristic = p / n * gap - p * (2.0 * p - 1.0) * r / n;
        let truthful = -(1.0 - p) / n * gap + (1.0 - p) * (2.0 * p - 1.0) * r / n;
        (heuristic, truthful)
    }

    /// `p* = 1/2 + (R₂₂ − R₁₁)/(2r)`: truthful reports out-earn heuristic ones
    /// in the report-pool test mode exactly when `p > p*`.
    pub fn truthful_threshold(&self) -> Result<f64> {
        if !(self.r > 0.0) {
            return Err(Error::Domain("truthful threshold needs r > 0".into()));
        }
        Ok(0.5 + (self.r22 - self.r11) / (2.0 * self.r))
    }
}

/// Expected total payout `α·ΔR(Q, n, r)` for budgeting before a run.
pub fn budget_estimate(q: f64, n: f64, r_estimate: f64, alpha: f64) -> f64 {
    let params = MixtureParams {
        q,
        n,
        r: r_estimate,
        ..MixtureParams::default()
    };
    alpha * params.total_risk_change()
}

/// Payment scale so that the expected truthful payment at the stream midpoint
/// covers the effort cost: `α = e / (−R'(n/2))`.
pub fn calibrate_payment_scale(effort: f64, q: f64, n: f64, r_estimate: f64) -> Result<f64> {
    let params = MixtureParams {
        q,
        n,
        r: r_estimate,
        ..MixtureParams::default()
    };
    let m = params.marginal_influence(n / 2.0);
    if !(m > 0.0) || !(effort >= 0.0) {
        return Err(Error::Domain(format!(
            "cannot calibrate payment scale (effort {effort}, marginal influence {m})"
        )));
    }
    Ok((effort / m).max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_risk_examples() {
        let p = MixtureParams {
            q: 100.0,
            r: 0.5,
            r22: 0.1,
            ..Default::default()
        };
        assert!((p.expected_risk(100.0) - 0.225).abs() < 1e-15);
        assert!((p.expected_risk(0.0) - 0.6).abs() < 1e-15);
        assert!((p.expected_risk(1e12) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn marginal_influence_examples() {
        let p = MixtureParams {
            q: 40.0,
            r: 0.8,
            ..Default::default()
        };
        assert!((p.marginal_influence(0.0) - 2.0 * 0.8 / 40.0).abs() < 1e-15);
        let zero = MixtureParams { r: 0.0, ..p };
        assert_eq!(zero.marginal_influence(12.0), 0.0);
    }

    #[test]
    fn total_risk_change_examples() {
        let p = MixtureParams::batch(500.0, 1500.0, 1.0);
        assert!((p.total_risk_change() - 0.9375).abs() < 1e-15);
        assert_eq!(MixtureParams { n: 0.0, ..p }.total_risk_change(), 0.0);
    }

    #[test]
    fn single_batch_sum() {
        let p = MixtureParams {
            q: 50.0,
            n: 300.0,
            b: 300.0,
            r: 1.3,
            ..Default::default()
        };
        let expected = 2.0 * 300.0 * 2500.0 * 1.3 / 350f64.powi(3);
        assert!((p.batch_sum(1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let mut p = MixtureParams {
            r: 2.0,
            r11: 1.0,
            r22: 1.0,
            ..Default::default()
        };
        assert_eq!(p.truthful_threshold().unwrap(), 0.5);
        p.r22 = 3.0;
        assert_eq!(p.truthful_threshold().unwrap(), 1.0);
        p.r = 0.0;
        assert!(p.truthful_threshold().is_err());
    }

    #[test]
    fn heuristic_examples() {
        let mut p = MixtureParams {
            n: 200.0,
            r: 1.5,
            r11: 0.7,
            r22: 1.1,
            p: 1.0,
            ..Default::default()
        };
        assert_eq!(p.heuristic_influences_independent(), (-0.0, 0.0));
        let (h, t) = p.heuristic_influences_mixed();
        assert_eq!(t, 0.0);
        assert!((h - (1.1 - 0.7 - 1.5) / 200.0).abs() < 1e-16);
        p.p = 0.5;
        p.r22 = p.r11;
        assert_eq!(p.heuristic_influences_mixed(), (0.0, 0.0));
    }

    #[test]
    fn ratio_domain_errors() {
        assert!(MixtureParams::batch(0.0, 10.0, 1.0).d_inclusive().is_err());
        assert!(MixtureParams::batch(10.0, 10.0, 0.0).d_exclusive().is_err());
    }

    #[test]
    fn budget_examples() {
        assert_eq!(budget_estimate(500.0, 0.0, 1.0, 2.0), 0.0);
        assert!((budget_estimate(1e-12, 1000.0, 0.7, 3.0) - 2.1).abs() < 1e-9);
    }

    #[test]
    fn calibration_covers_effort() {
        let alpha = calibrate_payment_scale(0.01, 500.0, 1500.0, 1.0).unwrap();
        let m = MixtureParams::batch(500.0, 1500.0, 1.0).marginal_influence(750.0);
        assert!((alpha * m - 0.01).abs() < 1e-15);
    }
}
