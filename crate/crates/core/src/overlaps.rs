//! Overlaps `⟨φ_μi|ψ_n⟩` between perturbed eigenstates and product states of
//! the unperturbed system and bath, their binned peak profiles, Lorentzian
//! fits and phase / magnitude statistics.

use std::f64::consts::PI;

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, lorentzian, FitError};
use crate::spectra::SpectrumBundle;
use crate::stats::{chi_square_uniform, linear_fit, ChiSquareTest};

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no eigenstate with energy inside [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("need at least {need} records, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error("insufficient support: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// One overlap with its energy labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapRecord {
    pub mu: usize,
    pub i: usize,
    pub n: usize,
    pub value: c64,
    pub e_i: f64,
    pub eps_mu: f64,
    pub lambda_n: f64,
}

/// Overlaps of a set of eigenstates `ψ_n` (columns) with every product
/// state; row `μ N_B + i`.
#[derive(Clone, Debug)]
pub struct OverlapMatrix {
    pub values: Mat<c64>,
    pub eps: Vec<f64>,
    pub bath_energies: Vec<f64>,
    /// Eigenstate index of each column.
    pub states: Vec<usize>,
    pub lambdas: Vec<f64>,
}

/// `⟨φ_μi|ψ_n⟩` for the eigenstates listed in `states` (all when `None`).
///
/// Each `N_B` block of `ψ_n` is rotated by `U_B†`, then blocks are mixed by
/// `U_S†`, so the cost is `N N_B` per state rather than `N²`.
pub fn compute_overlaps(
    full: &SpectrumBundle,
    system: &SpectrumBundle,
    bath: &SpectrumBundle,
    states: Option<&[usize]>,
) -> Result<OverlapMatrix, OverlapError> {
    let (ns, nb) = (system.dim(), bath.dim());
    if full.dim() != ns * nb {
        return Err(OverlapError::Dimension(format!("full {} vs {} x {}", full.dim(), ns, nb)));
    }
    let states: Vec<usize> = match states {
        Some(s) => s.to_vec(),
        None => (0..full.dim()).collect(),
    };
    if let Some(&bad) = states.iter().find(|&&k| k >= full.dim()) {
        return Err(OverlapError::Dimension(format!("state {bad} out of range")));
    }
    let m = states.len();
    let mut psi = Mat::<c64>::zeros(full.dim(), m);
    for (c, &k) in states.iter().enumerate() {
        psi.col_mut(c).copy_from(full.eigenvectors.col(k));
    }
    let ub_h = bath.eigenvectors.adjoint();
    let rotated: Vec<Mat<c64>> = (0..ns).map(|a| ub_h * psi.as_ref().subrows(a * nb, nb)).collect();
    let mut values = Mat::<c64>::zeros(ns * nb, m);
    for mu in 0..ns {
        for (a, w) in rotated.iter().enumerate() {
            let u = system.eigenvectors[(a, mu)].conj();
            if u == c64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..m {
                for i in 0..nb {
                    values[(mu * nb + i, c)] += u * w[(i, c)];
                }
            }
        }
    }
    let lambdas = states.iter().map(|&k| full.eigenvalues[k]).collect();
    Ok(OverlapMatrix { values, eps: system.eigenvalues.clone(), bath_energies: bath.eigenvalues.clone(), states, lambdas })
}

impl OverlapMatrix {
    pub fn n_system(&self) -> usize {
        self.eps.len()
    }

    pub fn n_bath(&self) -> usize {
        self.bath_energies.len()
    }

    pub fn abs2(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)].norm_sqr()
    }

    /// `Σ_μi |⟨φ_μi|ψ_n⟩|²` per column.
    pub fn state_sums(&self) -> Vec<f64> {
        (0..self.values.ncols()).map(|c| (0..self.values.nrows()).map(|r| self.abs2(r, c)).sum()).collect()
    }

    /// `Σ_n |⟨φ_μi|ψ_n⟩|²` per row; one only when all states are present.
    pub fn product_state_sums(&self) -> Vec<f64> {
        (0..self.values.nrows()).map(|r| (0..self.values.ncols()).map(|c| self.abs2(r, c)).sum()).collect()
    }

    /// Largest deviation of all marginal sums from one.
    pub fn completeness_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for s in self.state_sums() {
            worst = worst.max((s - 1.0).abs());
        }
        if self.values.ncols() == self.values.nrows() {
            for s in self.product_state_sums() {
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Whether every state coincides, up to a phase, with one product state
    /// and no product state is used twice.
    pub fn is_permutation_phase(&self, tol: f64) -> bool {
        let mut used = vec![false; self.values.nrows()];
        for c in 0..self.values.ncols() {
            let hits: Vec<usize> = (0..self.values.nrows()).filter(|&r| self.abs2(r, c) > tol).collect();
            if hits.len() != 1 || (self.abs2(hits[0], c) - 1.0).abs() > tol || used[hits[0]] {
                return false;
            }
            used[hits[0]] = true;
        }
        true
    }

    pub fn records(&self) -> impl Iterator<Item = OverlapRecord> + '_ {
        let nb = self.n_bath();
        (0..self.values.ncols()).flat_map(move |c| {
            (0..self.values.nrows()).map(move |r| OverlapRecord {
                mu: r / nb,
                i: r % nb,
                n: self.states[c],
                value: self.values[(r, c)],
                e_i: self.bath_energies[r % nb],
                eps_mu: self.eps[r / nb],
                lambda_n: self.lambdas[c],
            })
        })
    }
}

/// Eigenstates with `|λ - centre| <= half_width`.
pub fn states_in_window(eigenvalues: &[f64], centre: f64, half_width: f64) -> Vec<usize> {
    let lo = eigenvalues.partition_point(|&l| l < centre - half_width);
    let hi = eigenvalues.partition_point(|&l| l <= centre + half_width);
    (lo..hi).collect()
}

/// Energy window and binning of the averaged peak profiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lambda_center: f64,
    /// Half-width of the eigenvalue window.
    pub window: f64,
    pub n_bins: usize,
    /// Half-range of the bath-energy axis around each peak `λ - ε_μ`.
    pub half_range: f64,
}

/// Mean `|⟨φ_μi|ψ_n⟩|²` against `E_i` for one level `μ`, accumulated over
/// states and samples. Sums and counts merge exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurve {
    pub mu: usize,
    pub eps_mu: f64,
    pub spec: BinSpec,
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
    /// Contributing `(state, sample)` pairs.
    pub n_states: u64,
}

impl BinnedCurve {
    pub fn new(mu: usize, eps_mu: f64, spec: BinSpec) -> Self {
        BinnedCurve { mu, eps_mu, spec, sums: vec![0.0; spec.n_bins], counts: vec![0; spec.n_bins], n_states: 0 }
    }

    pub fn lower_edge(&self) -> f64 {
        self.spec.lambda_center - self.eps_mu - self.spec.half_range
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * self.spec.half_range / self.spec.n_bins as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let (lo, h) = (self.lower_edge(), self.bin_width());
        (0..self.spec.n_bins).map(|k| lo + (k as f64 + 0.5) * h).collect()
    }

    /// Bin means; `NaN` for empty bins.
    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect()
    }

    /// Add every state of `m` inside the window. States are aligned to the
    /// window centre by shifting `E_i` by `λ_center - λ_n`.
    pub fn accumulate(&mut self, m: &OverlapMatrix) -> usize {
        let nb = m.n_bath();
        let (lo, h) = (self.lower_edge(), self.bin_width());
        let mut used = 0;
        for (c, &lam) in m.lambdas.iter().enumerate() {
            if (lam - self.spec.lambda_center).abs() > self.spec.window {
                continue;
            }
            used += 1;
            let shift = self.spec.lambda_center - lam;
            for i in 0..nb {
                let u = (m.bath_energies[i] + shift - lo) / h;
                if u < 0.0 || u >= self.spec.n_bins as f64 {
                    continue;
                }
                let k = u as usize;
                self.sums[k] += m.abs2(self.mu * nb + i, c);
                self.counts[k] += 1;
            }
        }
        self.n_states += used as u64;
        used
    }

    pub fn merge(&mut self, other: &BinnedCurve) {
        assert!(self.mu == other.mu && self.spec == other.spec, "merging curves with different binning");
        for k in 0..self.sums.len() {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
        self.n_states += other.n_states;
    }
}

/// One curve per system level from a single overlap matrix.
pub fn bin_average(m: &OverlapMatrix, spec: BinSpec) -> Result<Vec<BinnedCurve>, OverlapError> {
    if spec.n_bins == 0 || !(spec.half_range > 0.0) || !(spec.window >= 0.0) {
        return Err(OverlapError::Dimension("bin spec needs n_bins > 0, half_range > 0, window >= 0".into()));
    }
    let mut curves: Vec<BinnedCurve> = m.eps.iter().enumerate().map(|(mu, &e)| BinnedCurve::new(mu, e, spec)).collect();
    let mut used = 0;
    for c in &mut curves {
        used = c.accumulate(m);
    }
    if used == 0 {
        return Err(OverlapError::EmptyWindow { lo: spec.lambda_center - spec.window, hi: spec.lambda_center + spec.window });
    }
    Ok(curves)
}

/// `A (γ/π) / ((E + ε_μ - λ_n - η)² + γ²)` fitted to a binned curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub area: f64,
    pub gamma: f64,
    pub eta: f64,
    /// `λ_n - ε_μ + η`.
    pub center: f64,
    /// Covariance of `[A, γ, η]`.
    pub covariance: Vec<Vec<f64>>,
    /// RMS residual over the fit range divided by the peak height.
    pub relative_residual: f64,
    /// Third central moment of the residuals, in units of their standard
    /// deviation cubed.
    pub asymmetry: f64,
    pub n_points: usize,
    /// Fit range in bath energy.
    pub range: (f64, f64),
}

impl LorentzianFit {
    pub fn stderr_area(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }
    pub fn stderr_gamma(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
    pub fn stderr_eta(&self) -> f64 {
        self.covariance[2][2].max(0.0).sqrt()
    }
}

// Humps above half the maximum, separated by dips below a quarter of it.
fn humps(y: &[f64], x: &[f64]) -> Vec<f64> {
    let peak = y.iter().cloned().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut out = Vec::new();
    let mut current: Option<(f64, f64)> = None;
    for (&v, &e) in y.iter().zip(x) {
        if !v.is_finite() {
            continue;
        }
        match current {
            None if v >= 0.5 * peak => current = Some((v, e)),
            Some((best, _)) if v > best => current = Some((v, e)),
            Some((_, at)) if v < 0.25 * peak => {
                out.push(at);
                current = None;
            }
            _ => {}
        }
    }
    if let Some((_, at)) = current {
        out.push(at);
    }
    out
}

/// Lorentzian `A (1/π) γ / ((x - c)² + γ²)` fitted to binned means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub area: f64,
    pub gamma: f64,
    pub center: f64,
    /// Covariance of `[A, γ, c]`.
    pub covariance: Vec<Vec<f64>>,
    /// RMS residual over the fit range divided by the peak height.
    pub relative_residual: f64,
    /// Third central moment of the residuals, in units of their standard
    /// deviation cubed.
    pub asymmetry: f64,
    pub n_points: usize,
    pub range: (f64, f64),
}

/// Fit the single peak of binned means `y` at centres `x`. Bins at or above
/// a fiftieth of the maximum, symmetric about the maximum, enter with weights
/// equal to their populations; empty bins (`counts = 0`) are skipped.
pub fn fit_binned_peak(x: &[f64], y: &[f64], counts: &[u64]) -> Result<PeakFit, FitError> {
    let bumps = humps(y, x);
    if bumps.len() > 1 {
        return Err(FitError::Ambiguous(bumps));
    }
    let (kmax, peak) = y
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    if !(peak > 0.0) {
        return Err(FitError::Degenerate("curve has no positive bins".into()));
    }
    let above = |k: usize| y[k].is_finite() && y[k] >= peak / 50.0 || counts[k] == 0;
    let mut left = 0;
    while kmax > left && above(kmax - left - 1) {
        left += 1;
    }
    let mut right = 0;
    while kmax + right + 1 < y.len() && above(kmax + right + 1) {
        right += 1;
    }
    let half = left.min(right);
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for k in kmax - half..=kmax + half {
        if counts[k] > 0 {
            xs.push(x[k]);
            ys.push(y[k]);
            ws.push(counts[k] as f64);
        }
    }
    if xs.len() < 5 {
        return Err(FitError::TooFewPoints { need: 5, got: xs.len() });
    }

    // Half-width from the half-maximum crossings around the peak.
    let (mut kl, mut kr) = (kmax, kmax);
    while kl > 0 && !(y[kl] < peak / 2.0) {
        kl -= 1;
    }
    while kr + 1 < y.len() && !(y[kr] < peak / 2.0) {
        kr += 1;
    }
    let h = if x.len() > 1 { (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64 } else { 1.0 };
    let g0 = ((kr - kl) as f64 * h / 2.0).max(h);
    let a0 = PI * g0 * peak;
    let r = levenberg_marquardt(&xs, &ys, &ws, &[a0, g0, x[kmax]], 500, lorentzian)?;
    let (area, gamma, center) = (r.params[0], r.params[1].abs(), r.params[2]);
    if !(area > 0.0 && gamma > 0.0) {
        return Err(FitError::Degenerate(format!("fit gave A = {area}, gamma = {gamma}")));
    }

    let mut g = [0.0; 3];
    let res: Vec<f64> = xs.iter().zip(&ys).map(|(&x, &y)| y - lorentzian(&r.params, x, &mut g)).collect();
    let n = res.len() as f64;
    let mr = res.iter().sum::<f64>() / n;
    let m2 = res.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n;
    let m3 = res.iter().map(|v| (v - mr).powi(3)).sum::<f64>() / n;
    let asymmetry = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let rms = (res.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    Ok(PeakFit {
        area,
        gamma,
        center,
        covariance: r.covariance,
        relative_residual: rms / peak,
        asymmetry,
        n_points: xs.len(),
        range: (xs[0], xs[xs.len() - 1]),
    })
}

/// Fit the peak of `curve` for the level at `eps_mu` and window centre
/// `lambda_n`; see [`fit_binned_peak`] for the fit range and weights.
pub fn fit_lorentzian(curve: &BinnedCurve, eps_mu: f64, lambda_n: f64) -> Result<LorentzianFit, OverlapError> {
    let p = fit_binned_peak(&curve.centers(), &curve.means(), &curve.counts)?;
    Ok(LorentzianFit {
        area: p.area,
        gamma: p.gamma,
        eta: p.center - (lambda_n - eps_mu),
        center: p.center,
        covariance: p.covariance,
        relative_residual: p.relative_residual,
        asymmetry: p.asymmetry,
        n_points: p.n_points,
        range: p.range,
    })
}

/// Shift `η_μ` that makes the two exponentially weighted areas of the
/// measured curve agree, the alternative centre for asymmetric peaks. The
/// curve is `e^{-βx/2} χ(x)` with `x = E + ε_μ - λ_n - η`.
pub fn sum_rule_eta(curve: &BinnedCurve, eps_mu: f64, lambda_n: f64, beta: f64) -> f64 {
    let origin = lambda_n - eps_mu;
    let (mut w0, mut w1) = (0.0, 0.0);
    for (e, y) in curve.centers().into_iter().zip(curve.means()) {
        if !y.is_finite() {
            continue;
        }
        w0 += y;
        w1 += y * (beta * (e - origin)).exp();
    }
    if beta.abs() < 1e-12 || !(w0 > 0.0) {
        // Centroid of the curve, the β → 0 limit of the condition.
        let (mut s, mut sx) = (0.0, 0.0);
        for (e, y) in curve.centers().into_iter().zip(curve.means()) {
            if y.is_finite() {
                s += y;
                sx += y * (e - origin);
            }
        }
        return sx / s;
    }
    (w1 / w0).ln() / beta
}

/// Histogram of overlap phases on `[-π, π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseHistogram {
    /// Probability density per bin.
    pub density: Vec<f64>,
    pub counts: Vec<f64>,
    pub uniformity: ChiSquareTest,
}

/// Overlaps with `|value|²` below this are treated as structural zeros.
const ZERO_OVERLAP: f64 = 1e-20;

pub fn phase_histogram(records: &[OverlapRecord], n_bins: usize) -> Result<PhaseHistogram, OverlapError> {
    let nonzero: Vec<&OverlapRecord> = records.iter().filter(|r| r.value.norm_sqr() > ZERO_OVERLAP).collect();
    let mut per_state = std::collections::HashMap::<usize, usize>::new();
    for r in &nonzero {
        *per_state.entry(r.n).or_default() += 1;
    }
    if !per_state.is_empty() && per_state.values().all(|&c| c <= 1) {
        return Err(OverlapError::Degenerate("every state has at most one nonzero overlap".into()));
    }
    let need = 10 * n_bins;
    if n_bins == 0 || nonzero.len() < need {
        return Err(OverlapError::TooFewRecords { need, got: nonzero.len() });
    }
    let mut counts = vec![0.0; n_bins];
    for r in &nonzero {
        let u = (r.value.arg() + PI) / (2.0 * PI) * n_bins as f64;
        counts[(u as usize).min(n_bins - 1)] += 1.0;
    }
    let total = nonzero.len() as f64;
    let h = 2.0 * PI / n_bins as f64;
    Ok(PhaseHistogram {
        density: counts.iter().map(|c| c / (total * h)).collect(),
        uniformity: chi_square_uniform(&counts),
        counts,
    })
}

/// Exponential law `p(y) = κ e^{-κy}` for `y = |overlap|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeFit {
    /// Decay rate from the mean (maximum likelihood), positive.
    pub kappa: f64,
    pub kappa_stderr: f64,
    /// Decay rate from a log-linear fit of the histogram.
    pub kappa_histogram: f64,
    /// Variance of the real and imaginary parts, `1/(2κ)`.
    pub sigma_sq: f64,
    pub mean: f64,
    /// Sample variance of `y` divided by the mean squared; one for an
    /// exponential law.
    pub variance_ratio: f64,
    /// RMS deviation of the histogram from the fitted law relative to the
    /// RMS expected count, over bins expecting at least five entries.
    pub relative_residual: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<f64>,
}

pub fn magnitude_distribution(abs2: &[f64], n_bins: usize) -> Result<MagnitudeFit, OverlapError> {
    let n = abs2.len();
    if n < 100 {
        return Err(OverlapError::TooFewRecords { need: 100, got: n });
    }
    if abs2.iter().any(|v| !(*v >= 0.0)) {
        return Err(OverlapError::Degenerate("negative or NaN magnitude".into()));
    }
    let mean = abs2.iter().sum::<f64>() / n as f64;
    if !(mean > 0.0) {
        return Err(OverlapError::Degenerate("all magnitudes vanish".into()));
    }
    let var = abs2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let kappa = 1.0 / mean;

    // Bins out to five mean values hold all but e^{-5} of the weight.
    let n_bins = n_bins.max(2);
    let top = 5.0 * mean;
    let h = top / n_bins as f64;
    let mut counts = vec![0.0; n_bins];
    for &v in abs2 {
        if v < top {
            counts[(v / h) as usize] += 1.0;
        }
    }
    let centers: Vec<f64> = (0..n_bins).map(|k| (k as f64 + 0.5) * h).collect();
    let expected: Vec<f64> =
        (0..n_bins).map(|k| n as f64 * ((-kappa * k as f64 * h).exp() - (-kappa * (k + 1) as f64 * h).exp())).collect();
    let (mut num, mut den, mut used) = (0.0, 0.0, 0);
    for k in 0..n_bins {
        if expected[k] >= 5.0 {
            num += (counts[k] - expected[k]).powi(2);
            den += expected[k] * expected[k];
            used += 1;
        }
    }
    let relative_residual = if used > 0 { (num / den).sqrt() } else { f64::NAN };

    let (mut lx, mut ly, mut lw) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_bins {
        if counts[k] > 0.0 {
            lx.push(centers[k]);
            ly.push(counts[k].ln());
            lw.push(counts[k]);
        }
    }
    let kappa_histogram = if lx.len() >= 2 { -linear_fit(&lx, &ly, Some(&lw)).slope } else { f64::NAN };

    Ok(MagnitudeFit {
        kappa,
        kappa_stderr: kappa / (n as f64).sqrt(),
        kappa_histogram,
        sigma_sq: 1.0 / (2.0 * kappa),
        mean,
        variance_ratio: var / (mean * mean),
        relative_residual,
        centers,
        counts,
    })
}
