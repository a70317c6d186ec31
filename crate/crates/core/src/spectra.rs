//! Dense Hermitian diagonalisation and Gaussian densities of states.

use std::f64::consts::PI;

use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{density_histogram, fit_gaussian, FitError};
use crate::stats::{chi_square_normal, ChiSquareTest};

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("dimension {dim} exceeds the configured cap {cap}")]
    TooLarge { dim: usize, cap: usize },
    #[error("operator is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("operator is not Hermitian (max |A - A^H| = {0:e})")]
    NotHermitian(f64),
    #[error("eigensolver failed: {0}")]
    NoConvergence(String),
    #[error("eigenpair residual {residual:e} exceeds {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("need at least {need} eigenvalues, got {got}")]
    TooFewEigenvalues { need: usize, got: usize },
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Which operator a spectrum belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Full,
    System,
    Bath,
}

/// Eigenvalues in nondecreasing order with eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SpectrumBundle {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Mat<c64>,
    pub source: SourceTag,
}

impl SpectrumBundle {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

fn check_operator(op: &Mat<c64>, max_dim: usize) -> Result<f64, SpectraError> {
    let (r, c) = (op.nrows(), op.ncols());
    if r != c {
        return Err(SpectraError::NotSquare(r, c));
    }
    if r > max_dim {
        return Err(SpectraError::TooLarge { dim: r, cap: max_dim });
    }
    let scale = op.norm_max();
    let mut worst: f64 = 0.0;
    for j in 0..r {
        for i in 0..=j {
            worst = worst.max((op[(i, j)] - op[(j, i)].conj()).norm());
        }
    }
    if worst > 1e-12 * scale.max(1e-300) {
        return Err(SpectraError::NotHermitian(worst));
    }
    Ok(scale)
}

/// Full eigendecomposition of a Hermitian operator.
///
/// A handful of evenly spaced eigenpairs is checked against
/// `||H v - λ v|| <= 1e-9 ||H||` before returning.
pub fn diagonalize(op: &Mat<c64>, source: SourceTag, max_dim: usize) -> Result<SpectrumBundle, SpectraError> {
    check_operator(op, max_dim)?;
    let n = op.nrows();
    if n == 0 {
        return Ok(SpectrumBundle { eigenvalues: vec![], eigenvectors: Mat::zeros(0, 0), source });
    }
    let evd = op
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| SpectraError::NoConvergence(format!("{e:?}")))?;
    let eigenvalues: Vec<f64> = (0..n).map(|k| evd.S().column_vector()[k].re).collect();
    let eigenvectors = evd.U().to_owned();
    let norm = eigenvalues[0].abs().max(eigenvalues[n - 1].abs());
    let bound = 1e-9 * norm.max(1e-300);
    let probes = 8.min(n);
    for p in 0..probes {
        let k = if probes > 1 { p * (n - 1) / (probes - 1) } else { 0 };
        let v = eigenvectors.col(k);
        let hv = op * v;
        let mut r2 = 0.0;
        for i in 0..n {
            r2 += (hv[i] - v[i] * eigenvalues[k]).norm_sqr();
        }
        let residual = r2.sqrt();
        if !(residual <= bound) {
            return Err(SpectraError::Residual { residual, bound });
        }
    }
    Ok(SpectrumBundle { eigenvalues, eigenvectors, source })
}

/// Eigenvalues only, in nondecreasing order.
pub fn eigenvalues(op: &Mat<c64>, max_dim: usize) -> Result<Vec<f64>, SpectraError> {
    check_operator(op, max_dim)?;
    op.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| SpectraError::NoConvergence(format!("{e:?}")))
}

/// Gaussian density of states `ρ(λ) = √(α/2π) exp(-α (λ - mean)² / 2)`
/// with `α = 1 / variance`, normalised to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub mean: f64,
    pub variance: f64,
}

impl DensityModel {
    pub fn centred(variance: f64) -> Self {
        DensityModel { mean: 0.0, variance }
    }

    pub fn alpha(&self) -> f64 {
        1.0 / self.variance
    }

    pub fn width(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn density(&self, lambda: f64) -> f64 {
        let d = lambda - self.mean;
        (-(d * d) / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }

    /// Microcanonical inverse temperature `-d ln ρ / dλ`.
    pub fn beta_at(&self, lambda: f64) -> f64 {
        -(lambda - self.mean) / self.variance
    }

    /// Energy whose microcanonical inverse temperature is `beta`.
    pub fn energy_at(&self, beta: f64) -> f64 {
        self.mean - beta * self.variance
    }

    /// `Z(β) = N ∫ ρ(λ) e^{-βλ} dλ = N exp(β²Δ²/2 - β mean)`.
    pub fn partition_function(&self, beta: f64, n_states: usize) -> f64 {
        n_states as f64 * (beta * beta * self.variance / 2.0 - beta * self.mean).exp()
    }

    /// Canonical mean energy `mean - β Δ²`.
    pub fn mean_energy(&self, beta: f64) -> f64 {
        self.energy_at(beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityFit {
    pub model: DensityModel,
    pub count: usize,
    /// Chi-square of the pooled values against the fitted normal, on
    /// equiprobable bins.
    pub goodness_of_fit: ChiSquareTest,
    pub kurtosis: f64,
}

/// Moment fit of a Gaussian density: empirical mean and population variance.
pub fn fit_gaussian_density(values: &[f64], n_bins: usize) -> Result<DensityFit, SpectraError> {
    if values.len() < 100 {
        return Err(SpectraError::TooFewEigenvalues { need: 100, got: values.len() });
    }
    let mean = crate::stats::mean(values);
    let variance = crate::stats::variance(values);
    if !(variance > 0.0) {
        return Err(SpectraError::Degenerate("all eigenvalues coincide".into()));
    }
    let goodness_of_fit = chi_square_normal(values, mean, variance.sqrt(), n_bins, 2);
    Ok(DensityFit {
        model: DensityModel { mean, variance },
        count: values.len(),
        goodness_of_fit,
        kurtosis: crate::stats::kurtosis(values),
    })
}

/// Standard deviation of a Gaussian fitted by least squares to the density
/// histogram of `values`, with its standard error.
pub fn histogram_width(values: &[f64], n_bins: usize) -> Result<(f64, f64), SpectraError> {
    if values.len() < 100 {
        return Err(SpectraError::TooFewEigenvalues { need: 100, got: values.len() });
    }
    let (x, y) = density_histogram(values, n_bins);
    let r = fit_gaussian(&x, &y, None)?;
    Ok((r.params[2], r.stderr(2)))
}
