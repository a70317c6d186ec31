//! Reduced density matrices of the system from single eigenstates, canonical
//! checks, temperature extraction, off-diagonal scaling with the Hilbert
//! space dimension, and the scattering lineshape between eigenstates.

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::FitError;
use crate::overlaps::{fit_binned_peak, OverlapMatrix, PeakFit};
use crate::stats::{linear_fit, LinearFit};

#[derive(Debug, Error)]
pub enum RdmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("state is not normalised (norm² = {0})")]
    NotNormalised(f64),
    #[error("non-positive population {value} on level {level}")]
    NonPositive { level: usize, value: f64 },
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("empty frequency bins in the fit range")]
    EmptyBins,
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Where a reduced state came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateSource {
    pub n: usize,
    pub sample: u64,
    pub lambda: f64,
}

/// `ρ^S` in the unperturbed system eigenbasis.
#[derive(Clone, Debug)]
pub struct ReducedDensityMatrix {
    pub matrix: Mat<c64>,
    pub source: StateSource,
}

impl ReducedDensityMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn population(&self, mu: usize) -> f64 {
        self.matrix[(mu, mu)].re
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.matrix[(k, k)].re).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self.matrix.self_adjoint_eigenvalues(Side::Lower) {
            Ok(v) => v.iter().cloned().fold(f64::INFINITY, f64::min),
            Err(_) => f64::NAN,
        }
    }
}

/// `ρ^S_μν = Σ_i ψ_{μi} conj(ψ_{νi})` for a state given in a product basis
/// with index `μ N_B + i`.
pub fn reduce(psi: &[c64], n_system: usize, n_bath: usize) -> Result<ReducedDensityMatrix, RdmError> {
    if psi.len() != n_system * n_bath {
        return Err(RdmError::Dimension(format!("state of length {} vs {} x {}", psi.len(), n_system, n_bath)));
    }
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(RdmError::NotNormalised(norm));
    }
    let mut m = Mat::<c64>::zeros(n_system, n_system);
    for mu in 0..n_system {
        for nu in mu..n_system {
            let mut s = c64::new(0.0, 0.0);
            for i in 0..n_bath {
                s += psi[mu * n_bath + i] * psi[nu * n_bath + i].conj();
            }
            m[(mu, nu)] = s;
            m[(nu, mu)] = s.conj();
        }
    }
    Ok(ReducedDensityMatrix { matrix: m, source: StateSource::default() })
}

/// Reduced states of every column of an overlap matrix.
pub fn reduce_overlaps(m: &OverlapMatrix, sample: u64) -> Result<Vec<ReducedDensityMatrix>, RdmError> {
    let (ns, nb) = (m.n_system(), m.n_bath());
    (0..m.values.ncols())
        .map(|c| {
            let col: Vec<c64> = (0..ns * nb).map(|r| m.values[(r, c)]).collect();
            let mut r = reduce(&col, ns, nb)?;
            r.source = StateSource { n: m.states[c], sample, lambda: m.lambdas[c] };
            Ok(r)
        })
        .collect()
}

/// Ensemble population ratio of one level pair against the canonical value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRatio {
    pub mu: usize,
    pub nu: usize,
    /// `mean(ρ_μμ) / mean(ρ_νν)`.
    pub ratio: f64,
    pub stderr: f64,
    /// `e^{-β((ε_μ - η_μ) - (ε_ν - η_ν))}`.
    pub expected: f64,
    pub relative_deviation: f64,
}

/// Compare ensemble population ratios with the shifted Boltzmann weights.
/// The ratio of ensemble means is used; its error follows from the delta
/// method with the sample covariance of the two populations.
pub fn boltzmann_check(rhos: &[ReducedDensityMatrix], eps: &[f64], eta: &[f64], beta: f64) -> Result<Vec<PairRatio>, RdmError> {
    let n = rhos.len();
    if n < 2 {
        return Err(RdmError::TooFew { what: "reduced states", need: 2, got: n });
    }
    let ns = eps.len();
    if eta.len() != ns || rhos.iter().any(|r| r.dim() != ns) {
        return Err(RdmError::Dimension("levels, shifts and reduced states disagree".into()));
    }
    let pops: Vec<Vec<f64>> = (0..ns).map(|mu| rhos.iter().map(|r| r.population(mu)).collect()).collect();
    let means: Vec<f64> = pops.iter().map(|p| p.iter().sum::<f64>() / n as f64).collect();
    let cov = |a: usize, b: usize| -> f64 {
        pops[a].iter().zip(&pops[b]).map(|(x, y)| (x - means[a]) * (y - means[b])).sum::<f64>() / (n - 1) as f64
    };
    let mut out = Vec::new();
    for mu in 0..ns {
        for nu in mu + 1..ns {
            let r = means[mu] / means[nu];
            let var = (cov(mu, mu) / means[mu].powi(2) + cov(nu, nu) / means[nu].powi(2)
                - 2.0 * cov(mu, nu) / (means[mu] * means[nu]))
                * r
                * r
                / n as f64;
            let expected = (-beta * ((eps[mu] - eta[mu]) - (eps[nu] - eta[nu]))).exp();
            out.push(PairRatio {
                mu,
                nu,
                ratio: r,
                stderr: var.max(0.0).sqrt(),
                expected,
                relative_deviation: r / expected - 1.0,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureMethod {
    TwoLevelRatio,
    MultiLevelRegression,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureEstimate {
    pub beta_fit: f64,
    /// Zero for two levels, where the ratio determines `β` exactly.
    pub stderr: f64,
    pub method: TemperatureMethod,
}

/// `β` from the slope of `ln ρ_μμ` against `ε_μ - η_μ`, weighting each level
/// by its population.
pub fn extract_beta(rho: &ReducedDensityMatrix, eps: &[f64], eta: Option<&[f64]>) -> Result<TemperatureEstimate, RdmError> {
    let ns = eps.len();
    if rho.dim() != ns || eta.is_some_and(|e| e.len() != ns) {
        return Err(RdmError::Dimension("levels and reduced state disagree".into()));
    }
    if ns < 2 {
        return Err(RdmError::TooFew { what: "levels", need: 2, got: ns });
    }
    let e: Vec<f64> = (0..ns).map(|mu| eps[mu] - eta.map_or(0.0, |h| h[mu])).collect();
    let p: Vec<f64> = (0..ns).map(|mu| rho.population(mu)).collect();
    if let Some((level, &value)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(RdmError::NonPositive { level, value });
    }
    if ns == 2 {
        if e[0] == e[1] {
            return Err(RdmError::TooFew { what: "distinct levels", need: 2, got: 1 });
        }
        let beta = -(p[0] / p[1]).ln() / (e[0] - e[1]);
        return Ok(TemperatureEstimate { beta_fit: beta, stderr: 0.0, method: TemperatureMethod::TwoLevelRatio });
    }
    let lp: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let f = linear_fit(&e, &lp, Some(&p));
    Ok(TemperatureEstimate { beta_fit: -f.slope, stderr: f.stderr_slope, method: TemperatureMethod::MultiLevelRegression })
}

/// Reduced states of one system size, grouped by disorder sample.
#[derive(Clone, Debug)]
pub struct SizeEnsemble {
    /// Hilbert space dimension `N`.
    pub dim: usize,
    pub samples: Vec<Vec<ReducedDensityMatrix>>,
}

/// Per-size summaries and log-log slopes against `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffdiagScaling {
    pub dims: Vec<usize>,
    pub mean_abs_rho12: Vec<f64>,
    pub var_rho11: Vec<f64>,
    pub var_rho12: Vec<f64>,
    /// Slope of `ln mean|ρ₁₂|` against `ln N`.
    pub kappa: LinearFit,
    pub var_rho11_slope: LinearFit,
    pub var_rho12_slope: LinearFit,
}

// Variance about each sample's own mean, pooled over samples.
fn pooled_within(groups: &[Vec<c64>]) -> f64 {
    let (mut ss, mut dof) = (0.0, 0usize);
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        let m = g.iter().fold(c64::new(0.0, 0.0), |a, b| a + b) / g.len() as f64;
        ss += g.iter().map(|v| (v - m).norm_sqr()).sum::<f64>();
        dof += g.len() - 1;
    }
    if dof > 0 {
        ss / dof as f64
    } else {
        f64::NAN
    }
}

/// Scaling of the first two levels' off-diagonal element and of the
/// fluctuations of `ρ₁₁` and `ρ₁₂` with `N`. Variances are taken within each
/// disorder sample and pooled, so that sample-to-sample drifts of the
/// temperature do not enter.
pub fn offdiag_scaling(sizes: &[SizeEnsemble]) -> Result<OffdiagScaling, RdmError> {
    if sizes.len() < 3 {
        return Err(RdmError::TooFew { what: "system sizes", need: 3, got: sizes.len() });
    }
    let mut dims = Vec::new();
    let (mut m12, mut v11, mut v12) = (Vec::new(), Vec::new(), Vec::new());
    for s in sizes {
        let all: Vec<&ReducedDensityMatrix> = s.samples.iter().flatten().collect();
        if all.is_empty() || all[0].dim() < 2 {
            return Err(RdmError::TooFew { what: "two-level reduced states", need: 1, got: 0 });
        }
        dims.push(s.dim);
        m12.push(all.iter().map(|r| r.matrix[(0, 1)].norm()).sum::<f64>() / all.len() as f64);
        let g11: Vec<Vec<c64>> = s.samples.iter().map(|g| g.iter().map(|r| c64::new(r.population(0), 0.0)).collect()).collect();
        let g12: Vec<Vec<c64>> = s.samples.iter().map(|g| g.iter().map(|r| r.matrix[(0, 1)]).collect()).collect();
        v11.push(pooled_within(&g11));
        v12.push(pooled_within(&g12));
    }
    let ln_n: Vec<f64> = dims.iter().map(|&d| (d as f64).ln()).collect();
    let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    Ok(OffdiagScaling {
        kappa: linear_fit(&ln_n, &ln(&m12), None),
        var_rho11_slope: linear_fit(&ln_n, &ln(&v11), None),
        var_rho12_slope: linear_fit(&ln_n, &ln(&v12), None),
        dims,
        mean_abs_rho12: m12,
        var_rho11: v11,
        var_rho12: v12,
    })
}

/// `S_{μ→ν}(m, n) = Σ_i ⟨ψ_m|φ_νi⟩⟨φ_μi|ψ_n⟩` for every column `m` of `all`
/// (rows of the result) and every column `n` of `window` (columns).
pub fn scattering_matrix(all: &OverlapMatrix, window: &OverlapMatrix, mu: usize, nu: usize) -> Result<Mat<c64>, RdmError> {
    let nb = all.n_bath();
    if window.n_bath() != nb || all.n_system() != window.n_system() || mu >= all.n_system() || nu >= all.n_system() {
        return Err(RdmError::Dimension("overlap matrices or level indices disagree".into()));
    }
    let cnu = all.values.as_ref().subrows(nu * nb, nb);
    let cmu = window.values.as_ref().subrows(mu * nb, nb);
    Ok(cnu.adjoint() * cmu)
}

/// Ensemble mean of `|S_{μ→ν}(m, n)|²` binned in `ω = λ_m - λ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringLineshape {
    pub mu: usize,
    pub nu: usize,
    pub lo: f64,
    pub bin_width: f64,
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_states: u64,
}

impl ScatteringLineshape {
    /// Bins of width `bin_width` covering `[centre - half_range, centre + half_range]`.
    pub fn new(mu: usize, nu: usize, centre: f64, half_range: f64, bin_width: f64) -> Self {
        let n = ((2.0 * half_range / bin_width).ceil() as usize).max(1);
        let lo = centre - n as f64 * bin_width / 2.0;
        ScatteringLineshape { mu, nu, lo, bin_width, sums: vec![0.0; n], counts: vec![0; n], n_states: 0 }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.sums.len()).map(|k| self.lo + (k as f64 + 0.5) * self.bin_width).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect()
    }

    /// Add the transitions from every state of `window` to every state of
    /// `all`, skipping `m = n`.
    pub fn accumulate(&mut self, all: &OverlapMatrix, window: &OverlapMatrix) -> Result<(), RdmError> {
        let s = scattering_matrix(all, window, self.mu, self.nu)?;
        for (cn, &ln) in window.lambdas.iter().enumerate() {
            for (cm, &lm) in all.lambdas.iter().enumerate() {
                if all.states[cm] == window.states[cn] {
                    continue;
                }
                let u = (lm - ln - self.lo) / self.bin_width;
                if u >= 0.0 && u < self.sums.len() as f64 {
                    self.sums[u as usize] += s[(cm, cn)].norm_sqr();
                    self.counts[u as usize] += 1;
                }
            }
        }
        self.n_states += window.lambdas.len() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &ScatteringLineshape) {
        assert!(self.sums.len() == other.sums.len() && self.lo == other.lo && self.bin_width == other.bin_width);
        for k in 0..self.sums.len() {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
        self.n_states += other.n_states;
    }

    /// Lorentzian fit; the centre estimates `(ε_ν - η_ν) - (ε_μ - η_μ)` and
    /// the half-width `γ_μ + γ_ν`.
    pub fn fit(&self) -> Result<PeakFit, RdmError> {
        if self.counts.iter().all(|&c| c == 0) {
            return Err(RdmError::EmptyBins);
        }
        Ok(fit_binned_peak(&self.centers(), &self.means(), &self.counts)?)
    }
}

/// Frequency bin width `max(4 × level spacing, γ/5)`.
pub fn lineshape_bin_width(level_spacing: f64, gamma_pred: f64) -> f64 {
    (4.0 * level_spacing).max(gamma_pred / 5.0)
}
