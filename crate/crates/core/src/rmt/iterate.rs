//! Self-consistent iteration of the peak functions for a general kernel.
//!
//! One step convolves each `χ_ν` with the kernel, `g_ν(ζ) = e^{-βζ/2} ∫ f(ω)
//! χ_ν(ω + ζ) dω`, builds `G̃_μ(x) = Σ_ν σ²_μν (H[g_ν] + iπ g_ν)(x - ε_μν)`
//! with `H` the principal-value transform, and re-evaluates `χ_μ`.
//! `g_ν` is smooth on the kernel scale, so it lives on a coarse grid aligned
//! with the fine peak grid.

use std::f64::consts::PI;

use faer::c64;
use serde::{Deserialize, Serialize};

use super::{chi_from_transform, global_shift, PeakFunction, RmtError};

/// Scattering kernel `f(ω)`; normalised internally to `∫ e^{βω/2} f = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Gaussian { delta0: f64 },
    /// Samples at `x0 + k dx`, zero outside.
    Tabulated { x0: f64, dx: f64, values: Vec<f64> },
}

impl Kernel {
    fn raw(&self, w: f64) -> f64 {
        match self {
            Kernel::Gaussian { delta0 } => (-(w * w) / (delta0 * delta0)).exp(),
            Kernel::Tabulated { x0, dx, values } => {
                let u = (w - x0) / dx;
                if u < 0.0 || u > (values.len() - 1) as f64 {
                    return 0.0;
                }
                let k = (u.floor() as usize).min(values.len() - 2);
                let f = u - k as f64;
                values[k] * (1.0 - f) + values[k + 1] * f
            }
        }
    }

    /// Half-width outside which the kernel is treated as zero.
    fn support(&self) -> f64 {
        match self {
            Kernel::Gaussian { delta0 } => 7.0 * delta0,
            Kernel::Tabulated { x0, dx, values } => x0.abs().max((x0 + dx * (values.len() - 1) as f64).abs()),
        }
    }

    /// Scale on which the kernel varies.
    fn scale(&self) -> f64 {
        match self {
            Kernel::Gaussian { delta0 } => *delta0,
            Kernel::Tabulated { x0, dx, values } => {
                let s: f64 = values.iter().sum();
                let m: f64 = values.iter().enumerate().map(|(k, v)| v * (x0 + k as f64 * dx)).sum::<f64>() / s;
                let v: f64 =
                    values.iter().enumerate().map(|(k, v)| v * (x0 + k as f64 * dx - m).powi(2)).sum::<f64>() / s;
                v.sqrt()
            }
        }
    }

    fn validate(&self) -> Result<(), RmtError> {
        match self {
            Kernel::Gaussian { delta0 } if !(*delta0 > 0.0) => Err(RmtError::BadInput("kernel width <= 0".into())),
            Kernel::Tabulated { dx, values, .. } if values.len() < 3 || !(*dx > 0.0) || values.iter().any(|v| *v < 0.0) => {
                Err(RmtError::BadInput("tabulated kernel needs >= 3 nonnegative samples".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of [`casati_girko_iterate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub chi: PeakFunction,
    pub iterations: usize,
    /// Weighted relative L1 change of each step.
    pub history: Vec<f64>,
    /// Common shift fixed by normalisation of the reduced state.
    pub global_shift: f64,
}

struct Coarse {
    z0: f64,
    h: f64,
    g: Vec<f64>,
    hg: Vec<f64>,
}

impl Coarse {
    // Four-point Lagrange interpolation, zero outside the grid.
    fn interp(&self, data: &[f64], z: f64) -> f64 {
        let u = (z - self.z0) / self.h;
        let n = data.len();
        if u < 1.0 || u >= (n - 2) as f64 {
            return 0.0;
        }
        let k = u.floor() as usize;
        let f = u - k as f64;
        let (p0, p1, p2, p3) = (data[k - 1], data[k], data[k + 1], data[k + 2]);
        let a = -f * (f - 1.0) * (f - 2.0) / 6.0;
        let b = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0;
        let c = -(f + 1.0) * f * (f - 2.0) / 2.0;
        let d = (f + 1.0) * f * (f - 1.0) / 6.0;
        a * p0 + b * p1 + c * p2 + d * p3
    }

    fn transform(&self, z: f64) -> c64 {
        c64::new(self.interp(&self.hg, z), PI * self.interp(&self.g, z))
    }
}

/// One iteration from `chi`.
pub fn casati_girko_step(
    chi: &PeakFunction,
    kernel: &Kernel,
    sigma_sq: &[Vec<f64>],
    t: f64,
) -> Result<PeakFunction, RmtError> {
    kernel.validate()?;
    let n_levels = chi.levels.len();
    if sigma_sq.len() != n_levels || chi.values.len() != n_levels || chi.eta.len() != n_levels {
        return Err(RmtError::BadInput("sigma_sq, levels and peak functions disagree in size".into()));
    }
    let beta = chi.beta;
    let grid = chi.grid;
    let dx = grid.dx;

    // Kernel tabulated on integer multiples of dx, normalised.
    let w = kernel.support();
    let nw = (w / dx).ceil() as i64;
    let ftab: Vec<f64> = (-nw..=nw).map(|k| kernel.raw(k as f64 * dx)).collect();
    let norm: f64 = ftab.iter().enumerate().map(|(k, f)| f * (beta * (k as i64 - nw) as f64 * dx / 2.0).exp()).sum::<f64>() * dx;
    if !(norm > 0.0) {
        return Err(RmtError::BadInput("kernel has zero weight".into()));
    }

    let eps = |mu: usize, nu: usize| (chi.levels[mu] - chi.eta[mu]) - (chi.levels[nu] - chi.eta[nu]);
    let emax = (0..n_levels).flat_map(|a| (0..n_levels).map(move |b| (a, b))).map(|(a, b)| eps(a, b).abs()).fold(0.0, f64::max);
    let m = ((kernel.scale() / 100.0 / dx).floor() as i64).max(1);
    let pad = ((w + emax + 4.0 * kernel.scale()) / dx).ceil() as i64;
    let (j_lo, j_hi) = ((-pad).div_euclid(m), (grid.n as i64 + pad).div_euclid(m) + 1);
    let h = m as f64 * dx;
    let z0 = grid.x0 + (j_lo * m) as f64 * dx;

    let mut coarse = Vec::with_capacity(n_levels);
    for nu in 0..n_levels {
        let col = &chi.values[nu];
        let mut g = Vec::with_capacity((j_hi - j_lo + 1) as usize);
        for j in j_lo..=j_hi {
            // ζ_j sits on fine index j m; ω = x_k - ζ_j = (k - j m) dx.
            let centre = j * m;
            let k_lo = (centre - nw).max(0);
            let k_hi = (centre + nw).min(grid.n as i64 - 1);
            let mut acc = 0.0;
            let mut k = k_lo;
            while k <= k_hi {
                acc += ftab[(k - centre + nw) as usize] * col[k as usize];
                k += 1;
            }
            let zeta = grid.x0 + centre as f64 * dx;
            g.push((-beta * zeta / 2.0).exp() * acc * dx / norm);
        }
        // Principal value ⨍ g(s)/(s - ζ_j) ds on the odd-offset subgrid.
        let n = g.len();
        let mut hg = vec![0.0; n];
        for (j, out) in hg.iter_mut().enumerate() {
            let mut s = 0.0;
            let mut l = 1;
            while l < n {
                let up = if j + l < n { g[j + l] } else { 0.0 };
                let dn = if j >= l { g[j - l] } else { 0.0 };
                s += (up - dn) / l as f64;
                l += 2;
            }
            *out = 2.0 * s;
        }
        coarse.push(Coarse { z0, h, g, hg });
    }

    let transform = |mu: usize, x: f64| -> c64 {
        let mut z = c64::new(0.0, 0.0);
        for nu in 0..n_levels {
            z += coarse[nu].transform(x - eps(mu, nu)) * sigma_sq[mu][nu];
        }
        z
    };
    let next = chi_from_transform(grid, beta, t, &chi.levels, &chi.eta, transform);
    if next.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RmtError::NoConvergence(vec![f64::NAN]));
    }
    Ok(next)
}

/// Iterate from `initial` until the weighted L1 change drops below `tol`.
pub fn casati_girko_iterate(
    initial: &PeakFunction,
    kernel: &Kernel,
    sigma_sq: &[Vec<f64>],
    t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<IterationReport, RmtError> {
    let mut chi = initial.clone();
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let next = casati_girko_step(&chi, kernel, sigma_sq, t)?;
        let change = next.weighted_l1_change(&chi);
        history.push(change);
        chi = next;
        if !change.is_finite() {
            break;
        }
        if change < tol {
            let global_shift = global_shift(&chi.levels, &chi.eta, chi.beta);
            return Ok(IterationReport { chi, iterations: it, history, global_shift });
        }
    }
    Err(RmtError::NoConvergence(history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmt::{chi_from_wieltjes, gaussian_peak, predict_gamma, two_level_sigma, wieltjes, PeakGrid, PredictionInput};

    #[test]
    fn gaussian_start_reproduces_closed_form() {
        // A Gaussian initial peak of width Δ_p convolved with a Gaussian kernel
        // gives the closed form with Δ₁² = Δ₀² + Δ_p².
        let mut inp = PredictionInput::new(2e-3, 0.6, 0.9, vec![-0.1, 0.1], two_level_sigma());
        inp.delta_p = 0.05;
        let gam = predict_gamma(&inp).unwrap();
        let grid = PeakGrid::covering(gam[0].min(gam[1]), gam[0].max(gam[1]), inp.delta1());
        let start = gaussian_peak(grid, inp.beta, inp.delta_p, &inp.levels, &inp.eta);
        let got = casati_girko_step(&start, &Kernel::Gaussian { delta0: 0.9 }, &inp.sigma_sq, inp.t).unwrap();
        let want = chi_from_wieltjes(&inp, Some(grid)).unwrap();
        assert!(got.weighted_l1_change(&want) < 1e-6, "{}", got.weighted_l1_change(&want));
        for mu in 0..2 {
            assert!((got.eta[mu] - want.eta[mu]).abs() < 1e-6 * gam[mu]);
        }
        // Sanity: the closed form itself at the origin.
        assert!(wieltjes(0.0, 0, &inp).im > 0.0);
    }

    #[test]
    fn tabulated_gaussian_matches_analytic_kernel() {
        let inp = PredictionInput::new(1e-3, 0.4, 1.0, vec![-0.1, 0.1], two_level_sigma());
        let chi = chi_from_wieltjes(&inp, None).unwrap();
        let tab: Vec<f64> = (0..1401).map(|k| { let w = -7.0 + 0.01 * k as f64; (-w * w).exp() * 3.0 }).collect();
        let a = casati_girko_step(&chi, &Kernel::Gaussian { delta0: 1.0 }, &inp.sigma_sq, inp.t).unwrap();
        let b = casati_girko_step(&chi, &Kernel::Tabulated { x0: -7.0, dx: 0.01, values: tab }, &inp.sigma_sq, inp.t).unwrap();
        assert!(a.weighted_l1_change(&b) < 1e-4);
    }

    #[test]
    fn bad_kernel_rejected() {
        let inp = PredictionInput::new(1e-3, 0.4, 1.0, vec![-0.1, 0.1], two_level_sigma());
        let chi = chi_from_wieltjes(&inp, None).unwrap();
        assert!(casati_girko_step(&chi, &Kernel::Gaussian { delta0: 0.0 }, &inp.sigma_sq, inp.t).is_err());
    }
}
