//! Analytic random-matrix predictions: decay rates and level shifts, the
//! Wieltjes transform of the scattering kernel, peak functions and their
//! self-consistent iteration, band-matrix kernels and consistency checks.

mod dawson;
mod iterate;
mod kernels;

use std::f64::consts::PI;

use faer::c64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dawson::{dawson, erfi, erfi_scaled};
pub use iterate::{casati_girko_iterate, casati_girko_step, IterationReport, Kernel};
pub use kernels::{
    global_shift, large_subsystem_gamma_eta, nesting_residual, tau_from_region, tau_kernel, tau_model,
    LargeSubsystemParams,
};

use crate::fit::{levenberg_marquardt, lorentzian, FitError};

#[derive(Debug, Error)]
pub enum RmtError {
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("iteration did not converge; weighted changes {0:?}")]
    NoConvergence(Vec<f64>),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Inputs of the first-order predictions for one system spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInput {
    /// Coupling variance.
    pub t: f64,
    pub beta: f64,
    /// Band width of the scattering kernel.
    pub delta0: f64,
    /// Width of the Gaussian initial peak; zero for a delta peak.
    pub delta_p: f64,
    /// System levels `ε_μ`.
    pub levels: Vec<f64>,
    /// Provisional shifts `η_μ` entering `ε_μν`; zeros for first order.
    pub eta: Vec<f64>,
    /// `σ²_μν`, rows summing to one.
    pub sigma_sq: Vec<Vec<f64>>,
}

impl PredictionInput {
    pub fn new(t: f64, beta: f64, delta0: f64, levels: Vec<f64>, sigma_sq: Vec<Vec<f64>>) -> Self {
        let n = levels.len();
        PredictionInput { t, beta, delta0, delta_p: 0.0, levels, eta: vec![0.0; n], sigma_sq }
    }

    pub fn validate(&self) -> Result<(), RmtError> {
        let n = self.levels.len();
        let bad = |m: &str| Err(RmtError::BadInput(m.to_string()));
        if n == 0 {
            return bad("no system levels");
        }
        if self.eta.len() != n || self.sigma_sq.len() != n || self.sigma_sq.iter().any(|r| r.len() != n) {
            return bad("levels, eta and sigma_sq sizes disagree");
        }
        if !(self.t >= 0.0) || !(self.delta0 > 0.0) || !(self.delta_p >= 0.0) || !self.beta.is_finite() {
            return bad("need t >= 0, delta0 > 0, delta_p >= 0 and finite beta");
        }
        if self.sigma_sq.iter().flatten().any(|s| !(*s >= 0.0)) {
            return bad("negative sigma_sq entry");
        }
        Ok(())
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// `Δ₁ = √(Δ₀² + Δ_p²)`.
    pub fn delta1(&self) -> f64 {
        self.delta0.hypot(self.delta_p)
    }

    /// `b₁ = β Δ₁ / 4`.
    pub fn b1(&self) -> f64 {
        self.beta * self.delta1() / 4.0
    }

    /// `ε_μν = (ε_μ - η_μ) - (ε_ν - η_ν)`.
    pub fn eps_diff(&self, mu: usize, nu: usize) -> f64 {
        (self.levels[mu] - self.eta[mu]) - (self.levels[nu] - self.eta[nu])
    }

    /// `ε̃_μν = ε_μν / Δ₁ - b₁`.
    pub fn eps_tilde(&self, mu: usize, nu: usize) -> f64 {
        self.eps_diff(mu, nu) / self.delta1() - self.b1()
    }
}

/// Golden-rule decay rates `γ_μ = t (√π/Δ) Σ_ν σ²_μν e^{-ε̃²_μν}`.
pub fn predict_gamma(input: &PredictionInput) -> Result<Vec<f64>, RmtError> {
    input.validate()?;
    let pref = input.t * PI.sqrt() / input.delta1();
    Ok((0..input.n_levels())
        .map(|mu| {
            let s: f64 = (0..input.n_levels())
                .map(|nu| {
                    let e = input.eps_tilde(mu, nu);
                    input.sigma_sq[mu][nu] * (-e * e).exp()
                })
                .sum();
            pref * s
        })
        .collect())
}

/// Level shifts `η_μ = -t (√π/Δ) Σ_ν σ²_μν e^{-ε̃²} erfi(ε̃)`.
pub fn predict_eta(input: &PredictionInput) -> Result<Vec<f64>, RmtError> {
    input.validate()?;
    let pref = input.t * PI.sqrt() / input.delta1();
    Ok((0..input.n_levels())
        .map(|mu| {
            let s: f64 = (0..input.n_levels())
                .map(|nu| input.sigma_sq[mu][nu] * erfi_scaled(input.eps_tilde(mu, nu)))
                .sum();
            -pref * s
        })
        .collect())
}

/// `η_μ` from the small-`ε̃` series of `(√π/2) e^{-v²} erfi(v)` truncated
/// after three terms, `v - 2v³/3 + 4v⁵/15`.
pub fn predict_eta_series(input: &PredictionInput) -> Result<Vec<f64>, RmtError> {
    input.validate()?;
    let pref = input.t * 2.0 / input.delta1();
    Ok((0..input.n_levels())
        .map(|mu| {
            let s: f64 = (0..input.n_levels())
                .map(|nu| {
                    let e = input.eps_tilde(mu, nu);
                    input.sigma_sq[mu][nu] * (e - 2.0 * e.powi(3) / 3.0 + 4.0 * e.powi(5) / 15.0)
                })
                .sum();
            -pref * s
        })
        .collect())
}

/// Single Gaussian term `e^{-v²}(-erfi(v) + i)`.
pub fn wieltjes_term(v: f64) -> c64 {
    c64::new(-erfi_scaled(v), (-v * v).exp())
}

/// `G̃_μ(x) = (√π/Δ₁) Σ_ν σ²_μν e^{-v²}(-erfi(v) + i)` with
/// `v = (x - ε_μν)/Δ₁ + b₁`; `x` is measured from `λ_n + η_μ`.
pub fn wieltjes(x: f64, mu: usize, input: &PredictionInput) -> c64 {
    let d1 = input.delta1();
    let b1 = input.b1();
    let mut g = c64::new(0.0, 0.0);
    for nu in 0..input.n_levels() {
        let v = (x - input.eps_diff(mu, nu)) / d1 + b1;
        g += wieltjes_term(v) * input.sigma_sq[mu][nu];
    }
    g * (PI.sqrt() / d1)
}

/// Uniform grid `x_k = x0 + k dx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakGrid {
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl PeakGrid {
    /// Symmetric grid spanning `±(20γ_max + 4Δ₁)` with spacing
    /// `min(γ_min/20, Δ₁/50)`.
    pub fn covering(gamma_min: f64, gamma_max: f64, delta1: f64) -> Self {
        let half = 20.0 * gamma_max + 4.0 * delta1;
        let dx = (gamma_min / 20.0).min(delta1 / 50.0);
        let n = 2 * (half / dx).ceil() as usize + 1;
        PeakGrid { x0: -((n / 2) as f64) * dx, dx, n }
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.x(k))
    }
}

/// Peak functions `χ_μ(x)` on a shared grid; `x` for level `μ` is measured
/// from `λ_n + eta[μ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakFunction {
    pub grid: PeakGrid,
    pub beta: f64,
    pub levels: Vec<f64>,
    pub eta: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl PeakFunction {
    /// `(∫ e^{-βx/2} χ_μ, ∫ e^{+βx/2} χ_μ)` by the trapezoid rule.
    pub fn sum_rules(&self, mu: usize) -> (f64, f64) {
        trapezoid_sum_rules(self.grid, self.beta, &self.values[mu])
    }

    /// Relative change to `other` in the weight `e^{|βx|/2}`, level by level,
    /// reporting the largest.
    pub fn weighted_l1_change(&self, other: &PeakFunction) -> f64 {
        assert_eq!(self.grid, other.grid);
        let mut worst: f64 = 0.0;
        for mu in 0..self.values.len() {
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..self.grid.n {
                let w = (self.beta * self.grid.x(k)).abs() * 0.5;
                let w = w.exp();
                num += w * (self.values[mu][k] - other.values[mu][k]).abs();
                den += w * other.values[mu][k].abs();
            }
            worst = worst.max(num / den);
        }
        worst
    }

    /// Half-width of a Lorentzian fitted within `±window` of the peak of
    /// `e^{-βx/2} χ_μ`.
    pub fn fitted_half_width(&self, mu: usize, window: f64) -> Result<(f64, f64), RmtError> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (k, v) in self.values[mu].iter().enumerate() {
            let x = self.grid.x(k);
            if x.abs() <= window {
                xs.push(x);
                ys.push(v * (-self.beta * x / 2.0).exp());
            }
        }
        let peak = ys.iter().cloned().fold(0.0, f64::max);
        let p0 = [1.0, 1.0 / (PI * peak), 0.0];
        let w = vec![1.0; xs.len()];
        let r = levenberg_marquardt(&xs, &ys, &w, &p0, 500, lorentzian)?;
        Ok((r.params[1].abs(), r.params[2]))
    }
}

fn trapezoid_sum_rules(grid: PeakGrid, beta: f64, col: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (k, v) in col.iter().enumerate() {
        let x = grid.x(k);
        let w = if k == 0 || k + 1 == grid.n { 0.5 } else { 1.0 };
        lo += w * v * (-beta * x / 2.0).exp();
        hi += w * v * (beta * x / 2.0).exp();
    }
    (lo * grid.dx, hi * grid.dx)
}

/// Evaluate `χ_μ` on the grid from a Wieltjes transform `g(mu, x)`, then
/// shift the reference `η_μ` so that both sum rules hold and normalise.
pub(crate) fn chi_from_transform(
    grid: PeakGrid,
    beta: f64,
    t: f64,
    levels: &[f64],
    eta: &[f64],
    g: impl Fn(usize, f64) -> c64,
) -> PeakFunction {
    let n_levels = levels.len();
    let eval = |mu: usize, x: f64| -> f64 {
        let z = g(mu, x);
        let re = x + eta[mu] + t * z.re;
        let im = t * z.im;
        (beta * x / 2.0).exp() * im / (PI * (re * re + im * im))
    };
    let mut out_eta = eta.to_vec();
    let mut values = Vec::with_capacity(n_levels);
    for mu in 0..n_levels {
        // Move the reference onto the first-order peak, then (β ≠ 0) onto the
        // point where both exponentially weighted areas agree.
        let mut shift = -eta[mu] - t * g(mu, 0.0).re;
        let sample = |shift: f64| -> Vec<f64> { grid.points().map(|x| eval(mu, x + shift)).collect() };
        let mut col = sample(shift);
        if beta.abs() > 1e-12 {
            let (lo, hi) = trapezoid_sum_rules(grid, beta, &col);
            shift += (hi / lo).ln() / beta;
            col = sample(shift);
        }
        let (lo, hi) = trapezoid_sum_rules(grid, beta, &col);
        let norm = (lo * hi).sqrt();
        values.push(col.iter().map(|v| v / norm).collect());
        out_eta[mu] = eta[mu] + shift;
    }
    PeakFunction { grid, beta, levels: levels.to_vec(), eta: out_eta, values }
}

/// First-iteration peak functions from the closed-form Wieltjes transform.
/// The grid defaults to [`PeakGrid::covering`] the largest predicted rate.
pub fn chi_from_wieltjes(input: &PredictionInput, grid: Option<PeakGrid>) -> Result<PeakFunction, RmtError> {
    input.validate()?;
    let gammas = predict_gamma(input)?;
    let gmin = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(gmin > 0.0) {
        return Err(RmtError::BadInput("peak width is zero (t = 0 or empty sigma_sq row)".into()));
    }
    let gmax = gammas.iter().cloned().fold(0.0, f64::max);
    let grid = grid.unwrap_or_else(|| PeakGrid::covering(gmin, gmax, input.delta1()));
    Ok(chi_from_transform(grid, input.beta, input.t, &input.levels, &input.eta, |mu, x| wieltjes(x, mu, input)))
}

/// Gaussian initial peak `e^{-b_p²}/(√π Δ_p) e^{-x²/Δ_p²}`, `b_p = βΔ_p/4`.
pub fn gaussian_peak(grid: PeakGrid, beta: f64, delta_p: f64, levels: &[f64], eta: &[f64]) -> PeakFunction {
    let bp = beta * delta_p / 4.0;
    let pref = (-bp * bp).exp() / (PI.sqrt() * delta_p);
    let col: Vec<f64> = grid.points().map(|x| pref * (-(x * x) / (delta_p * delta_p)).exp()).collect();
    PeakFunction { grid, beta, levels: levels.to_vec(), eta: eta.to_vec(), values: vec![col; levels.len()] }
}

/// Single spin coupled through all three Pauli components: `σ²_11 = σ²_22 = 1/3`, `σ²_12 = 2/3`.
pub fn two_level_sigma() -> Vec<Vec<f64>> {
    vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![2.0 / 3.0, 1.0 / 3.0]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(t: f64, beta: f64, delta0: f64) -> PredictionInput {
        PredictionInput::new(t, beta, delta0, vec![-0.1, 0.1], two_level_sigma())
    }

    #[test]
    fn infinite_temperature_symmetric_levels() {
        let inp = PredictionInput::new(1e-3, 0.0, 1.0, vec![0.0, 0.0], two_level_sigma());
        let g = predict_gamma(&inp).unwrap();
        let e = predict_eta(&inp).unwrap();
        assert!((g[0] - 1e-3 * PI.sqrt()).abs() < 1e-18);
        assert!((g[0] - g[1]).abs() < 1e-18);
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_coupling_is_zero() {
        let inp = two_level(0.0, 1.0, 0.9);
        assert!(predict_gamma(&inp).unwrap().iter().all(|g| *g == 0.0));
        assert!(chi_from_wieltjes(&inp, None).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let mut inp = two_level(1e-3, 1.0, 0.9);
        inp.delta0 = 0.0;
        assert!(predict_gamma(&inp).is_err());
        let mut inp = two_level(1e-3, 1.0, 0.9);
        inp.sigma_sq[0][1] = -0.1;
        assert!(predict_eta(&inp).is_err());
    }

    #[test]
    fn series_is_close_for_small_arguments() {
        let inp = two_level(1e-3, 0.2, 2.0);
        let exact = predict_eta(&inp).unwrap();
        let series = predict_eta_series(&inp).unwrap();
        for (a, b) in exact.iter().zip(&series) {
            assert!((a - b).abs() < 1e-3 * a.abs().max(1e-9));
        }
    }

    #[test]
    fn wieltjes_imaginary_part_at_origin() {
        let inp = PredictionInput::new(1e-3, 0.0, 0.8, vec![0.0, 0.0], two_level_sigma());
        let g = wieltjes(0.0, 0, &inp);
        assert!((g.im - PI.sqrt() / 0.8).abs() < 1e-14);
        assert!(g.re.abs() < 1e-16);
    }

    #[test]
    fn wieltjes_term_real_part_is_odd() {
        for v in [0.1, 0.7, 2.5] {
            assert!((wieltjes_term(v).re + wieltjes_term(-v).re).abs() < 1e-16);
            assert!((wieltjes_term(v).im - wieltjes_term(-v).im).abs() < 1e-16);
        }
    }

    #[test]
    fn peak_is_normalised_and_centred() {
        let inp = two_level(2e-3, 0.8, 0.9);
        let chi = chi_from_wieltjes(&inp, None).unwrap();
        let eta = predict_eta(&inp).unwrap();
        let gam = predict_gamma(&inp).unwrap();
        for mu in 0..2 {
            let (lo, hi) = chi.sum_rules(mu);
            assert!((lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10);
            // Equalising the two weighted integrals moves the centre by a
            // fraction of the width: the tails of χ are not symmetric at β ≠ 0.
            assert!((chi.eta[mu] - eta[mu]).abs() < 0.25 * gam[mu]);
        }
    }

    #[test]
    fn peak_centre_is_first_order_shift_at_infinite_temperature() {
        let inp = two_level(2e-3, 0.0, 0.9);
        let chi = chi_from_wieltjes(&inp, None).unwrap();
        let eta = predict_eta(&inp).unwrap();
        for mu in 0..2 {
            assert!((chi.eta[mu] - eta[mu]).abs() < 1e-12);
        }
    }
}
