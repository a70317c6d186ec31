//! Small statistics helpers: moments, regressions and chi-square tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Pearson chi-square goodness-of-fit result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    pub fn from_counts(observed: &[f64], expected: &[f64], fitted_params: usize) -> Self {
        assert_eq!(observed.len(), expected.len());
        let statistic: f64 = observed
            .iter()
            .zip(expected)
            .filter(|(_, e)| **e > 0.0)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let dof = observed.len().saturating_sub(1 + fitted_params).max(1);
        let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
        ChiSquareTest { statistic, dof, p_value }
    }

    pub fn rejected_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Chi-square test of `values` against `N(mean, sd^2)` on `n_bins`
/// equiprobable bins.
pub fn chi_square_normal(values: &[f64], mean: f64, sd: f64, n_bins: usize, fitted_params: usize) -> ChiSquareTest {
    let normal = Normal::new(mean, sd).expect("positive standard deviation");
    let mut edges: Vec<f64> = (1..n_bins).map(|k| normal.inverse_cdf(k as f64 / n_bins as f64)).collect();
    edges.sort_by(f64::total_cmp);
    let mut counts = vec![0.0; n_bins];
    for &v in values {
        let k = edges.partition_point(|&e| e <= v);
        counts[k] += 1.0;
    }
    let expected = vec![values.len() as f64 / n_bins as f64; n_bins];
    ChiSquareTest::from_counts(&counts, &expected, fitted_params)
}

/// Chi-square test of bin counts against a flat distribution.
pub fn chi_square_uniform(counts: &[f64]) -> ChiSquareTest {
    let total: f64 = counts.iter().sum();
    let expected = vec![total / counts.len() as f64; counts.len()];
    ChiSquareTest::from_counts(counts, &expected, 0)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by `n`).
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Unbiased variance (divides by `n - 1`).
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    (sample_variance(x) / x.len() as f64).sqrt()
}

/// Excess-free kurtosis `m4 / m2^2` (3 for a Gaussian).
pub fn kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = (v - m) * (v - m);
        (a + d, b + d * d)
    });
    let n = x.len() as f64;
    (m4 / n) / (m2 / n).powi(2)
}

/// Weighted least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub stderr_intercept: f64,
    pub r_squared: f64,
}

/// Fit with weights `w` (inverse variances up to a common scale). Standard
/// errors use the residual scatter, so they are zero for an exact fit.
pub fn linear_fit(x: &[f64], y: &[f64], w: Option<&[f64]>) -> LinearFit {
    let n = x.len();
    assert!(n >= 2 && y.len() == n);
    let ones = vec![1.0; n];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let s2 = if n > 2 { ssr / (n - 2) as f64 } else { 0.0 };
    let stderr_slope = (s2 / sxx).sqrt();
    let stderr_intercept = (s2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    LinearFit { slope, intercept, stderr_slope, stderr_intercept, r_squared }
}

/// Least-squares line through the origin; `r_squared` is the uncentred
/// coefficient `1 - Σres² / Σy²`.
pub fn proportional_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len();
    assert!(n >= 1 && y.len() == n);
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let slope = sxy / sxx;
    let ssr: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let s2 = if n > 1 { ssr / (n - 1) as f64 } else { 0.0 };
    LinearFit {
        slope,
        intercept: 0.0,
        stderr_slope: (s2 / sxx).sqrt(),
        stderr_intercept: 0.0,
        r_squared: if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y, None);
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.stderr_slope < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn slope_stderr_matches_textbook_formula() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.1, 1.9, 3.2, 3.9, 5.1];
        let f = linear_fit(&x, &y, None);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 0.04).abs() < 1e-12);
        let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - 0.04 - a).powi(2)).sum();
        assert!((f.stderr_slope - (ssr / 3.0 / 10.0).sqrt()).abs() < 1e-12);
        assert!((f.stderr_intercept - (ssr / 3.0 * (0.2 + 9.0 / 10.0)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn equiprobable_bins_accept_quantiles() {
        // Values placed at bin midpoints in probability are a perfect fit.
        let n = Normal::new(0.0, 2.0).unwrap();
        let v: Vec<f64> = (0..1000).map(|k| n.inverse_cdf((k as f64 + 0.5) / 1000.0)).collect();
        let t = chi_square_normal(&v, 0.0, 2.0, 20, 0);
        assert!(t.statistic < 1e-9);
        assert!(t.p_value > 0.999);
        let t = chi_square_normal(&v, 0.0, 1.0, 20, 0);
        assert!(t.rejected_at(0.01));
    }

    #[test]
    fn uniform_counts_pass() {
        let t = chi_square_uniform(&[10.0; 50]);
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 49);
    }
}
