//! Weighted nonlinear least squares (Levenberg–Marquardt) and the peak
//! shapes used throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("singular normal equations")]
    Singular,
    #[error("ambiguous peak, candidate maxima at {0:?}")]
    Ambiguous(Vec<f64>),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Parameter covariance scaled by the residual variance.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted sum of squared residuals.
    pub ssr: f64,
    pub dof: usize,
    pub iterations: usize,
}

impl LmResult {
    pub fn stderr(&self, k: usize) -> f64 {
        self.covariance[k][k].max(0.0).sqrt()
    }
}

/// Solve `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert_small(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        cols.push(solve_small(a.to_vec(), e)?);
    }
    Some((0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect())
}

/// Minimise `Σ w_k (y_k - f(p; x_k))²`. `model(p, x, grad)` returns the value
/// and writes `∂f/∂p` into `grad`.
pub fn levenberg_marquardt<F>(
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p0: &[f64],
    max_iter: usize,
    model: F,
) -> Result<LmResult, FitError>
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let (n, np) = (x.len(), p0.len());
    if n <= np {
        return Err(FitError::TooFewPoints { need: np + 1, got: n });
    }
    let mut grad = vec![0.0; np];
    let ssr_at = |p: &[f64], grad: &mut [f64]| -> f64 {
        (0..n).map(|k| w[k] * (y[k] - model(p, x[k], grad)).powi(2)).sum()
    };
    let normal_eqs = |p: &[f64], grad: &mut [f64]| {
        let mut jtj = vec![vec![0.0; np]; np];
        let mut jtr = vec![0.0; np];
        for k in 0..n {
            let r = y[k] - model(p, x[k], grad);
            for a in 0..np {
                jtr[a] += w[k] * grad[a] * r;
                for b in 0..=a {
                    jtj[a][b] += w[k] * grad[a] * grad[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                jtj[b][a] = jtj[a][b];
            }
        }
        (jtj, jtr)
    };

    let mut p = p0.to_vec();
    let mut ssr = ssr_at(&p, &mut grad);
    if !ssr.is_finite() {
        return Err(FitError::Degenerate("non-finite residual at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let (jtj, jtr) = normal_eqs(&p, &mut grad);
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[d][d] += lambda * jtj[d][d].max(1e-300);
            }
            let Some(step) = solve_small(a, jtr.clone()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let s = ssr_at(&trial, &mut grad);
            if s.is_finite() && s <= ssr {
                let small_step = step.iter().zip(&trial).all(|(d, v)| d.abs() <= 1e-12 * (v.abs() + 1e-300));
                let small_gain = ssr - s <= 1e-15 * ssr;
                p = trial;
                ssr = s;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step even with a huge damping: at a minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence(it));
    }
    let (jtj, _) = normal_eqs(&p, &mut grad);
    let inv = invert_small(&jtj).ok_or(FitError::Singular)?;
    let dof = n - np;
    let s2 = ssr / dof as f64;
    let covariance = inv.iter().map(|row| row.iter().map(|v| v * s2).collect()).collect();
    Ok(LmResult { params: p, covariance, ssr, dof, iterations: it })
}

/// `A (1/π) γ / ((x - c)² + γ²)` with parameters `[A, γ, c]`.
pub fn lorentzian(p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    let (a, g, c) = (p[0], p[1], p[2]);
    let u = x - c;
    let d = u * u + g * g;
    grad[0] = g / (PI * d);
    grad[1] = a / PI * (u * u - g * g) / (d * d);
    grad[2] = a * g / PI * 2.0 * u / (d * d);
    a * g / (PI * d)
}

/// `A exp(-(x - m)² / (2 s²))` with parameters `[A, m, s]`.
pub fn gaussian(p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    let (a, m, s) = (p[0], p[1], p[2]);
    let u = (x - m) / s;
    let e = (-0.5 * u * u).exp();
    grad[0] = e;
    grad[1] = a * e * u / s;
    grad[2] = a * e * u * u / s;
    a * e
}

/// Gaussian fit `[A, m, s]` to samples `(x, y)`; `s` is returned positive.
pub fn fit_gaussian(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<LmResult, FitError> {
    let ones = vec![1.0; x.len()];
    let w = w.unwrap_or(&ones);
    let total: f64 = y.iter().sum();
    if !(total > 0.0) {
        return Err(FitError::Degenerate("gaussian fit of a non-positive profile".into()));
    }
    let m = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / total;
    let var = x.iter().zip(y).map(|(a, b)| b * (a - m).powi(2)).sum::<f64>() / total;
    let peak = y.iter().cloned().fold(f64::MIN, f64::max);
    let mut r = levenberg_marquardt(x, y, w, &[peak, m, var.sqrt().max(1e-12)], 500, gaussian)?;
    r.params[2] = r.params[2].abs();
    Ok(r)
}

/// Density histogram of `values` with `n_bins` equal bins: `(centres, density)`.
pub fn density_histogram(values: &[f64], n_bins: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let h = (hi - lo) / n_bins as f64;
    let mut counts = vec![0.0; n_bins];
    for &v in values {
        let k = (((v - lo) / h) as usize).min(n_bins - 1);
        counts[k] += 1.0;
    }
    let n = values.len() as f64;
    let centres = (0..n_bins).map(|k| lo + (k as f64 + 0.5) * h).collect();
    (centres, counts.iter().map(|c| c / (n * h)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorentzian_gradient_matches_finite_difference() {
        let p = [2.0, 0.3, -0.1];
        let mut g = [0.0; 3];
        let mut gh = [0.0; 3];
        for x in [-1.0, -0.1, 0.2, 0.9] {
            lorentzian(&p, x, &mut g);
            for k in 0..3 {
                let mut q = p;
                q[k] += 1e-6;
                let up = lorentzian(&q, x, &mut gh);
                q[k] -= 2e-6;
                let dn = lorentzian(&q, x, &mut gh);
                assert!((g[k] - (up - dn) / 2e-6).abs() < 1e-6 * (1.0 + g[k].abs()));
            }
        }
    }

    #[test]
    fn noiseless_lorentzian_is_recovered() {
        let truth = [1.5e-3, 2.0e-3, -0.9];
        let x: Vec<f64> = (0..200).map(|k| -0.95 + k as f64 * 5e-4).collect();
        let mut g = [0.0; 3];
        let y: Vec<f64> = x.iter().map(|&v| lorentzian(&truth, v, &mut g)).collect();
        let w = vec![1.0; x.len()];
        let r = levenberg_marquardt(&x, &y, &w, &[1e-3, 4e-3, -0.905], 200, lorentzian).unwrap();
        for k in 0..3 {
            assert!((r.params[k] - truth[k]).abs() < 1e-9 * truth[k].abs().max(1e-3), "param {k}");
        }
    }

    #[test]
    fn gaussian_histogram_fit_recovers_width() {
        let x: Vec<f64> = (0..101).map(|k| -5.0 + 0.1 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * (-0.5 * (v - 0.2) * (v - 0.2) / 1.44).exp()).collect();
        let r = fit_gaussian(&x, &y, None).unwrap();
        assert!((r.params[2] - 1.2).abs() < 1e-9);
        assert!((r.params[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let r = levenberg_marquardt(&[0.0, 1.0], &[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0, 1.0], 10, lorentzian);
        assert!(matches!(r, Err(FitError::TooFewPoints { .. })));
    }
}
