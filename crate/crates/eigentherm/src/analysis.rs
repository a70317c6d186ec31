//! Measurements derived from pooled ensembles: densities, peak fits, band
//! widths, predictions, canonical ratios and transition lineshapes.

use eigentherm_core::overlaps::{fit_lorentzian, LorentzianFit};
use eigentherm_core::rdm::{boltzmann_check, offdiag_scaling, OffdiagScaling, PairRatio, RdmError, SizeEnsemble};
use eigentherm_core::rmt::{predict_eta, predict_gamma, PredictionInput, RmtError};
use eigentherm_core::spectra::{fit_gaussian_density, histogram_width, DensityFit, DensityModel, SpectraError};
use eigentherm_core::xstats::{check_factorization, fit_scattering_widths, one_box_exclusion, FactorizationResult, ScatteringWidths, XStatsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::EnsembleAggregate;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no data for {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    XStats(#[from] XStatsError),
    #[error(transparent)]
    Rmt(#[from] RmtError),
    #[error(transparent)]
    Rdm(#[from] RdmError),
}

/// Gaussian fits of pooled eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub fit: DensityFit,
    /// Standard deviation of a Gaussian fitted to the histogram.
    pub histogram_sd: f64,
    pub histogram_sd_stderr: f64,
}

pub fn density_summary(values: &[f64], n_bins: usize) -> Result<DensitySummary, AnalysisError> {
    let fit = fit_gaussian_density(values, n_bins)?;
    let (sd, se) = histogram_width(values, n_bins)?;
    Ok(DensitySummary { fit, histogram_sd: sd, histogram_sd_stderr: se })
}

/// `Δ_tot² = Δ_B² + t + h1²`, the variance of the full spectrum.
pub fn total_variance(bath_variance: f64, t: f64, h1: f64) -> f64 {
    bath_variance + t + h1 * h1
}

/// `β = -λ/Δ_tot²` for a centred Gaussian density.
pub fn beta_at(lambda: f64, total_variance: f64) -> f64 {
    DensityModel::centred(total_variance).beta_at(lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub target: usize,
    pub lambda: f64,
    pub mu: usize,
    pub eps_mu: f64,
    pub n_states: u64,
    pub fit: Option<LorentzianFit>,
    pub error: Option<String>,
}

/// Lorentzian fit of every pooled overlap curve.
pub fn fit_peaks(agg: &EnsembleAggregate) -> Vec<PeakRow> {
    let mut rows = Vec::new();
    for (k, t) in agg.targets.iter().enumerate() {
        for c in &t.curves {
            let (fit, error) = match fit_lorentzian(c, c.eps_mu, t.lambda) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(PeakRow { target: k, lambda: t.lambda, mu: c.mu, eps_mu: c.eps_mu, n_states: c.n_states, fit, error });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub widths: ScatteringWidths,
    pub factorization: FactorizationResult,
    pub central_exclusion: f64,
    pub n_samples: u64,
}

pub fn coupling_summary(agg: &EnsembleAggregate, bath: &DensityModel) -> Result<CouplingSummary, AnalysisError> {
    let map = agg.xstats.as_ref().ok_or(AnalysisError::Missing("coupling statistics"))?;
    let excl = one_box_exclusion(map.box_elements, map.n_bath, bath);
    Ok(CouplingSummary {
        widths: fit_scattering_widths(map, Some(bath), excl)?,
        factorization: check_factorization(map)?,
        central_exclusion: excl,
        n_samples: map.n_samples,
    })
}

/// Predicted rates and shifts with a band of `±1` standard error in `Δ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub lambda: f64,
    pub beta: f64,
    pub delta0: f64,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma_band: Vec<(f64, f64)>,
    pub eta_band: Vec<(f64, f64)>,
}

pub fn predict(levels: &[f64], sigma_sq: &[Vec<f64>], t: f64, beta: f64, lambda: f64, delta0: f64, delta0_stderr: f64) -> Result<Prediction, AnalysisError> {
    let run = |d: f64| -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
        let inp = PredictionInput::new(t, beta, d, levels.to_vec(), sigma_sq.to_vec());
        Ok((predict_gamma(&inp)?, predict_eta(&inp)?))
    };
    let (gamma, eta) = run(delta0)?;
    let se = if delta0_stderr.is_finite() { delta0_stderr.min(0.5 * delta0) } else { 0.0 };
    let (g_lo, e_lo) = run(delta0 - se)?;
    let (g_hi, e_hi) = run(delta0 + se)?;
    let band = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x.min(*y), x.max(*y))).collect::<Vec<_>>();
    Ok(Prediction { lambda, beta, delta0, gamma_band: band(&g_lo, &g_hi), eta_band: band(&e_lo, &e_hi), gamma, eta })
}

/// Ensemble canonical ratios at one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub target: usize,
    pub lambda: f64,
    pub beta: f64,
    pub n_states: usize,
    pub pairs: Vec<PairRatio>,
}

pub fn canonical_ratios(agg: &EnsembleAggregate, eta: &[Vec<f64>], total_variance: f64) -> Result<Vec<RatioRow>, AnalysisError> {
    let mut rows = Vec::new();
    for (k, t) in agg.targets.iter().enumerate() {
        let rhos: Vec<_> = t.states.iter().map(|s| s.to_rdm()).collect();
        if rhos.is_empty() {
            return Err(AnalysisError::Missing("reduced states"));
        }
        let beta = beta_at(t.lambda, total_variance);
        let pairs = boltzmann_check(&rhos, &agg.eps, &eta[k], beta)?;
        rows.push(RatioRow { target: k, lambda: t.lambda, beta, n_states: rhos.len(), pairs });
    }
    Ok(rows)
}

/// Off-diagonal scaling across system sizes, pooling all targets.
pub fn size_scaling(sizes: &[(usize, &EnsembleAggregate)]) -> Result<OffdiagScaling, AnalysisError> {
    let ens: Vec<SizeEnsemble> = sizes
        .iter()
        .map(|(dim, agg)| {
            let mut samples = Vec::new();
            for k in 0..agg.targets.len() {
                samples.extend(agg.states_by_sample(k));
            }
            SizeEnsemble { dim: *dim, samples }
        })
        .collect();
    Ok(offdiag_scaling(&ens)?)
}
