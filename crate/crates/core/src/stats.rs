//! Small statistical helpers used by the simulations and their tests.

use nalgebra::{DMatrix, DVector};

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: f64,
    pub variance: f64,
    /// Continuity-corrected normal score.
    pub z: f64,
}

impl MannKendall {
    /// One-sided test for a decreasing trend at the 95% level.
    pub fn decreasing(&self) -> bool {
        self.z < -1.6448536269514722
    }

    pub fn increasing(&self) -> bool {
        self.z > 1.6448536269514722
    }
}

/// Mann–Kendall trend statistic with the tie correction on the variance.
pub fn mann_kendall(v: &[f64]) -> MannKendall {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (v[j] - v[i])
                .partial_cmp(&0.0)
                .map_or(0.0, |o| o as i32 as f64);
        }
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if variance <= 0.0 {
        0.0
    } else if s > 0.0 {
        (s - 1.0) / variance.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / variance.sqrt()
    } else {
        0.0
    };
    MannKendall { s, variance, z }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F₁ − F₂|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic 95% critical value of [`ks_statistic`].
pub fn ks_critical_95(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.358 * ((n + m) / (n * m)).sqrt()
}

/// Least-squares `y ≈ a + b·x + c·x²`, returned as `[a, b, c]`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<[f64; 3]> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let design = DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(j as i32));
    let target = DVector::from_column_slice(y);
    let coef = design.svd(true, true).solve(&target, 1e-12).ok()?;
    Some([coef[0], coef[1], coef[2]])
}

/// Vertex of a concave quadratic fit, `None` if the fit opens upward.
pub fn quadratic_peak(coef: [f64; 3]) -> Option<f64> {
    (coef[2] < 0.0).then(|| -coef[1] / (2.0 * coef[2]))
}
