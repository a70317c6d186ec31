//! Per-sample analysis task and the order-fixed merge of its results.
//!
//! A task is a pure function of the lattice, the parameters, the sample
//! index and the options, so results do not depend on which worker ran it.
//! Merges fold results in sample order.

use eigentherm_core::model::{sample_hamiltonian, HamiltonianSample, LatticeSpec, ModelError, ModelParams, SampleIndex};
use eigentherm_core::overlaps::{compute_overlaps, phase_histogram, BinSpec, BinnedCurve, OverlapError, OverlapMatrix};
use eigentherm_core::rdm::{reduce_overlaps, RdmError, ReducedDensityMatrix, ScatteringLineshape, StateSource};
use eigentherm_core::spectra::{diagonalize, eigenvalues, SourceTag, SpectraError, SpectrumBundle};
use eigentherm_core::xstats::{box_variances, rotate_to_unperturbed_basis, ProfileSpec, VarianceMap, XStatsError};
use eigentherm_core::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
    #[error(transparent)]
    Rdm(#[from] RdmError),
    #[error(transparent)]
    XStats(#[from] XStatsError),
    #[error("merge: {0}")]
    Merge(String),
}

/// Transition histogram settings for one `μ → ν` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineshapeSpec {
    pub mu: usize,
    pub nu: usize,
    pub centre: f64,
    pub half_range: f64,
    pub bin_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XStatsSpec {
    pub box_elements: usize,
    pub profile: ProfileSpec,
}

/// What one task computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Eigenvalue targets `λ`.
    pub targets: Vec<f64>,
    /// Half-width of the eigenvalue window around each target.
    pub window: f64,
    /// Keep at most this many window states per sample, nearest the target.
    #[serde(default)]
    pub max_states: Option<usize>,
    /// Half-range of the bath-energy axis around each overlap peak.
    pub curve_half_range: f64,
    pub curve_bins: usize,
    pub overlaps: bool,
    pub rdm: bool,
    pub lineshapes: Vec<LineshapeSpec>,
    pub xstats: Option<XStatsSpec>,
    /// Phase histogram bins; zero disables.
    pub phase_bins: usize,
    /// Full eigenvalues even when no other analysis needs them.
    #[serde(default)]
    pub spectrum: bool,
    pub max_dim: usize,
}

impl SampleOptions {
    fn needs_full(&self) -> bool {
        self.overlaps || self.rdm || !self.lineshapes.is_empty() || self.phase_bins > 0
    }
}

/// Reduced state of one eigenstate, `ρ` row-major as `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub sample: SampleIndex,
    pub n: usize,
    pub lambda: f64,
    pub rho: Vec<(f64, f64)>,
}

impl StateRecord {
    fn from_rdm(sample: SampleIndex, r: &ReducedDensityMatrix) -> Self {
        let d = r.dim();
        let rho = (0..d * d).map(|k| r.matrix[(k / d, k % d)]).map(|z| (z.re, z.im)).collect();
        StateRecord { sample, n: r.source.n, lambda: r.source.lambda, rho }
    }

    pub fn dim(&self) -> usize {
        (self.rho.len() as f64).sqrt().round() as usize
    }

    pub fn to_rdm(&self) -> ReducedDensityMatrix {
        let d = self.dim();
        ReducedDensityMatrix {
            matrix: Mat::from_fn(d, d, |i, j| {
                let (re, im) = self.rho[i * d + j];
                c64::new(re, im)
            }),
            source: StateSource { n: self.n, sample: self.sample.bath, lambda: self.lambda },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub lambda: f64,
    pub n_states: usize,
    /// One curve per system level.
    pub curves: Vec<BinnedCurve>,
    pub states: Vec<StateRecord>,
    pub lineshapes: Vec<ScatteringLineshape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: SampleIndex,
    pub eps: Vec<f64>,
    pub full_eigenvalues: Vec<f64>,
    pub bath_eigenvalues: Vec<f64>,
    /// Largest deviation of `Σ_{μi} |⟨φ_μi|ψ_n⟩|²` from one over the
    /// windowed states.
    pub completeness_error: f64,
    pub targets: Vec<TargetResult>,
    pub phase_counts: Vec<f64>,
    pub xstats: Option<VarianceMap>,
}

fn window_states(eigs: &[f64], lo: f64, hi: f64) -> Vec<usize> {
    (0..eigs.len()).filter(|&n| eigs[n] >= lo && eigs[n] <= hi).collect()
}

// Keeps the `cap` states closest to `lambda`, in index order.
fn nearest(states: &mut Vec<usize>, eigs: &[f64], lambda: f64, cap: usize) {
    if states.len() > cap {
        states.sort_by(|&a, &b| (eigs[a] - lambda).abs().total_cmp(&(eigs[b] - lambda).abs()).then(a.cmp(&b)));
        states.truncate(cap);
        states.sort_unstable();
    }
}

/// Run every analysis selected in `opts` on one Hamiltonian sample.
pub fn analyze_sample(spec: &LatticeSpec, params: &ModelParams, index: SampleIndex, opts: &SampleOptions) -> Result<SampleResult, SampleError> {
    let h = sample_hamiltonian(spec, params, index);
    analyze_hamiltonian(&h, opts)
}

pub fn analyze_hamiltonian(h: &HamiltonianSample, opts: &SampleOptions) -> Result<SampleResult, SampleError> {
    let sys = diagonalize(&h.h_s.to_dense(), SourceTag::System, opts.max_dim)?;
    let need_bath_vectors = opts.needs_full() || opts.xstats.is_some();
    let (bath, bath_eigenvalues) = if need_bath_vectors {
        let b = diagonalize(&h.h_b.to_dense(), SourceTag::Bath, opts.max_dim)?;
        let e = b.eigenvalues.clone();
        (Some(b), e)
    } else {
        (None, eigenvalues(&h.h_b.to_dense(), opts.max_dim)?)
    };

    let mut out = SampleResult {
        index: h.index,
        eps: sys.eigenvalues.clone(),
        full_eigenvalues: Vec::new(),
        bath_eigenvalues,
        completeness_error: 0.0,
        targets: Vec::new(),
        phase_counts: Vec::new(),
        xstats: None,
    };

    if let (Some(xs), Some(bath)) = (&opts.xstats, &bath) {
        let rot = rotate_to_unperturbed_basis(&h.x, &sys, bath)?;
        out.xstats = Some(box_variances(&rot, xs.box_elements, &xs.profile)?);
    }

    if opts.needs_full() {
        let bath = bath.as_ref().expect("bath vectors computed above");
        let full = diagonalize(&h.total_dense(), SourceTag::Full, opts.max_dim)?;
        out.full_eigenvalues = full.eigenvalues.clone();
        let mut phase_records = Vec::new();
        for &lambda in &opts.targets {
            let t = analyze_target(lambda, &full, &sys, bath, h.index, opts, &mut out.completeness_error)?;
            if opts.phase_bins > 0 {
                phase_records.push(t.1);
            }
            out.targets.push(t.0);
        }
        if opts.phase_bins > 0 {
            let records: Vec<_> = phase_records.iter().flat_map(|m| m.records()).collect();
            out.phase_counts = phase_histogram(&records, opts.phase_bins)?.counts;
        }
    } else if opts.spectrum {
        out.full_eigenvalues = eigenvalues(&h.total_dense(), opts.max_dim)?;
    }
    Ok(out)
}

fn analyze_target(
    lambda: f64,
    full: &SpectrumBundle,
    sys: &SpectrumBundle,
    bath: &SpectrumBundle,
    index: SampleIndex,
    opts: &SampleOptions,
    completeness: &mut f64,
) -> Result<(TargetResult, OverlapMatrix), SampleError> {
    let mut states = window_states(&full.eigenvalues, lambda - opts.window, lambda + opts.window);
    if let Some(cap) = opts.max_states {
        nearest(&mut states, &full.eigenvalues, lambda, cap);
    }
    let m = compute_overlaps(full, sys, bath, Some(&states))?;
    *completeness = completeness.max(m.completeness_error());

    let mut curves = Vec::new();
    if opts.overlaps {
        let spec = BinSpec { lambda_center: lambda, window: opts.window, n_bins: opts.curve_bins, half_range: opts.curve_half_range };
        for (mu, &e) in m.eps.iter().enumerate() {
            let mut c = BinnedCurve::new(mu, e, spec);
            c.accumulate(&m);
            curves.push(c);
        }
    }
    let rdm_states = if opts.rdm {
        reduce_overlaps(&m, index.bath)?.iter().map(|r| StateRecord::from_rdm(index, r)).collect()
    } else {
        Vec::new()
    };

    let mut lineshapes = Vec::new();
    if !opts.lineshapes.is_empty() {
        let reach = opts.lineshapes.iter().map(|l| l.centre.abs() + l.half_range).fold(0.0, f64::max) + opts.window;
        let partners = window_states(&full.eigenvalues, lambda - reach, lambda + reach);
        let all = compute_overlaps(full, sys, bath, Some(&partners))?;
        for l in &opts.lineshapes {
            let mut s = ScatteringLineshape::new(l.mu, l.nu, l.centre, l.half_range, l.bin_width);
            s.accumulate(&all, &m)?;
            lineshapes.push(s);
        }
    }
    Ok((TargetResult { lambda, n_states: states.len(), curves, states: rdm_states, lineshapes }, m))
}

/// Pooled results of many samples, merged in sample order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAggregate {
    pub n_samples: usize,
    pub eps: Vec<f64>,
    pub full_eigenvalues: Vec<f64>,
    pub bath_eigenvalues: Vec<f64>,
    pub completeness_error: f64,
    pub targets: Vec<TargetResult>,
    pub phase_counts: Vec<f64>,
    pub xstats: Option<VarianceMap>,
}

impl EnsembleAggregate {
    pub fn push(&mut self, r: &SampleResult) -> Result<(), SampleError> {
        if self.n_samples == 0 {
            self.eps = r.eps.clone();
            self.targets = r.targets.clone();
            self.phase_counts = r.phase_counts.clone();
            self.xstats = r.xstats.clone();
        } else {
            if self.targets.len() != r.targets.len() || self.phase_counts.len() != r.phase_counts.len() {
                return Err(SampleError::Merge("samples were analysed with different options".into()));
            }
            for (a, b) in self.targets.iter_mut().zip(&r.targets) {
                if a.curves.len() != b.curves.len() || a.lineshapes.len() != b.lineshapes.len() {
                    return Err(SampleError::Merge("target layouts differ".into()));
                }
                a.n_states += b.n_states;
                for (x, y) in a.curves.iter_mut().zip(&b.curves) {
                    x.merge(y);
                }
                for (x, y) in a.lineshapes.iter_mut().zip(&b.lineshapes) {
                    x.merge(y);
                }
                a.states.extend(b.states.iter().cloned());
            }
            for (x, y) in self.phase_counts.iter_mut().zip(&r.phase_counts) {
                *x += y;
            }
            match (&mut self.xstats, &r.xstats) {
                (Some(a), Some(b)) => a.merge(b)?,
                (None, None) => {}
                _ => return Err(SampleError::Merge("xstats present in only some samples".into())),
            }
        }
        self.full_eigenvalues.extend_from_slice(&r.full_eigenvalues);
        self.bath_eigenvalues.extend_from_slice(&r.bath_eigenvalues);
        self.completeness_error = self.completeness_error.max(r.completeness_error);
        self.n_samples += 1;
        Ok(())
    }

    /// Reduced states of one target grouped by sample, in sample order.
    pub fn states_by_sample(&self, target: usize) -> Vec<Vec<ReducedDensityMatrix>> {
        let mut groups: Vec<(SampleIndex, Vec<ReducedDensityMatrix>)> = Vec::new();
        for s in &self.targets[target].states {
            match groups.last_mut() {
                Some((idx, g)) if *idx == s.sample => g.push(s.to_rdm()),
                _ => groups.push((s.sample, vec![s.to_rdm()])),
            }
        }
        groups.into_iter().map(|(_, g)| g).collect()
    }
}

/// Merge results in the order given.
pub fn aggregate<'a>(results: impl IntoIterator<Item = &'a SampleResult>) -> Result<EnsembleAggregate, SampleError> {
    let mut agg = EnsembleAggregate::default();
    for r in results {
        agg.push(r)?;
    }
    Ok(agg)
}

/// Analyse `indices` on a pool of `workers` threads, returning results in
/// the order of `indices`.
pub fn run_samples(
    spec: &LatticeSpec,
    params: &ModelParams,
    indices: &[SampleIndex],
    opts: &SampleOptions,
    workers: usize,
) -> Result<Vec<SampleResult>, SampleError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| SampleError::Merge(e.to_string()))?;
    pool.install(|| indices.par_iter().map(|&i| analyze_sample(spec, params, i, opts)).collect())
}
