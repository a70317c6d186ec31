//! Stage exporters. Each stage writes JSON (read back by the report) and
//! CSV for other tools.

use std::path::PathBuf;

use eigentherm_core::overlaps::{BinnedCurve, LorentzianFit, PeakFit};
use eigentherm_core::rdm::{extract_beta, PairRatio, ScatteringLineshape};
use eigentherm_core::spectra::DensityModel;
use eigentherm_core::stats::{chi_square_uniform, ChiSquareTest};
use eigentherm_core::xstats::VarianceMap;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, beta_at, total_variance, CouplingSummary, DensitySummary, PeakRow, Prediction, RatioRow};
use crate::campaign::{csv_io, generate_terms, CampaignData, PipelineError, Stage};
use crate::config::RunConfig;
use crate::ensemble::{EnsembleAggregate, StateRecord};
use crate::store::ResultStore;

/// Relative tolerance of predicted against measured rates and shifts.
pub const RATE_TOLERANCE: f64 = 0.25;
/// Relative tolerance of canonical ratios against the Boltzmann factor.
pub const RATIO_TOLERANCE: f64 = 0.10;
/// Absolute tolerance of the coupling-shape factors.
pub const SIGMA_TOLERANCE: f64 = 0.05;
/// Relative tolerance of `Δ_d/2` against the unperturbed spectral width.
pub const DIAGONAL_WIDTH_TOLERANCE: f64 = 0.05;
pub const FACTORIZATION_TOLERANCE: f64 = 0.10;
pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub sites: usize,
    pub system_sites: usize,
    pub dim: usize,
    pub h1: f64,
    pub t: Vec<f64>,
    pub n_bath_samples: usize,
    pub bath: Option<DensitySummary>,
    pub bath_error: Option<String>,
    /// Per coupling value; `None` when the full spectrum was not computed.
    pub full: Vec<Option<DensitySummary>>,
    pub completeness_error: Vec<f64>,
    pub n_samples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub t: f64,
    pub target: usize,
    pub lambda: f64,
    pub curves: Vec<BinnedCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub t: f64,
    pub counts: Vec<f64>,
    pub uniformity: Option<ChiSquareTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TPeak {
    pub t: f64,
    #[serde(flatten)]
    pub row: PeakRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TCoupling {
    pub t: f64,
    pub summary: Option<CouplingSummary>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TMap {
    pub t: f64,
    pub map: VarianceMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TPrediction {
    pub t: f64,
    pub target: usize,
    pub prediction: Prediction,
}

/// One measured-against-expected line of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub t: Option<f64>,
    pub lambda: Option<f64>,
    pub measured: f64,
    pub stderr: f64,
    pub expected: f64,
    pub tolerance: String,
    pub within: bool,
}

impl Comparison {
    fn relative(quantity: &str, t: Option<f64>, lambda: Option<f64>, measured: f64, stderr: f64, expected: f64, tol: f64) -> Self {
        Comparison {
            quantity: quantity.into(),
            t,
            lambda,
            measured,
            stderr,
            expected,
            tolerance: format!("rel {tol}"),
            within: (measured - expected).abs() <= tol * expected.abs(),
        }
    }

    fn absolute(quantity: &str, t: Option<f64>, measured: f64, expected: f64, tol: f64) -> Self {
        Comparison { quantity: quantity.into(), t, lambda: None, measured, stderr: f64::NAN, expected, tolerance: format!("abs {tol}"), within: (measured - expected).abs() <= tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TStates {
    pub t: f64,
    pub target: usize,
    pub lambda: f64,
    pub dim: usize,
    pub states: Vec<StateRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TRatios {
    pub t: f64,
    pub dim: usize,
    /// Source of the level shifts: `fit`, `prediction` or `none`.
    pub eta_source: String,
    pub row: RatioRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TLineshape {
    pub t: f64,
    pub target: usize,
    pub lambda: f64,
    pub shape: ScatteringLineshape,
    pub fit: Option<PeakFit>,
    pub error: Option<String>,
}

pub struct StageContext<'a> {
    store: &'a ResultStore,
    cfg: &'a RunConfig,
    data: Option<&'a CampaignData>,
    include: &'a [PathBuf],
    bath: Option<Result<DensitySummary, String>>,
    peaks: Option<Vec<TPeak>>,
    coupling: Option<Vec<TCoupling>>,
    predictions: Option<Vec<TPrediction>>,
}

fn write_csv(store: &ResultStore, rel: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(&r).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Io(std::io::Error::other(e.to_string())))?;
    Ok(store.write_atomic(rel, &bytes)?)
}

fn s(v: f64) -> String {
    v.to_string()
}

impl<'a> StageContext<'a> {
    pub fn new(store: &'a ResultStore, cfg: &'a RunConfig, data: Option<&'a CampaignData>, include: &'a [PathBuf]) -> Self {
        StageContext { store, cfg, data, include, bath: None, peaks: None, coupling: None, predictions: None }
    }

    pub fn run(&mut self, stage: Stage) -> Result<Option<String>, PipelineError> {
        match stage {
            Stage::Generate => {
                let bytes = generate_terms(self.cfg)?;
                self.store.write_atomic("eigen/terms.csv", &bytes)?;
                Ok(None)
            }
            Stage::Diagonalize => self.diagonalize(),
            Stage::Overlaps => self.overlaps(),
            Stage::Fit => self.fit(),
            Stage::Xstats => self.xstats(),
            Stage::Predict => self.predict(),
            Stage::Rdm => self.rdm(),
            Stage::Report => crate::report::emit_report(self.store, self.include).map(Some),
        }
    }

    fn data(&self) -> Result<&'a CampaignData, PipelineError> {
        self.data.ok_or_else(|| PipelineError::Unavailable("no sample results loaded".into()))
    }

    fn bath_density(&mut self) -> Result<DensitySummary, PipelineError> {
        if self.bath.is_none() {
            let d = self.data()?;
            self.bath = Some(analysis::density_summary(&d.bath_eigenvalues, self.cfg.ensemble.density_bins).map_err(|e| e.to_string()));
        }
        self.bath.clone().expect("set above").map_err(PipelineError::Numeric)
    }

    fn bath_model(&mut self) -> Result<DensityModel, PipelineError> {
        Ok(self.bath_density()?.fit.model)
    }

    fn diagonalize(&mut self) -> Result<Option<String>, PipelineError> {
        let d = self.data()?;
        let nbins = self.cfg.ensemble.density_bins;
        self.store.write_f64le("eigen/bath.f64le", &d.bath_eigenvalues)?;
        let mut full = Vec::new();
        for (k, agg) in d.per_t.iter().enumerate() {
            self.store.write_f64le(&format!("eigen/full_t{k}.f64le"), &agg.full_eigenvalues)?;
            full.push(analysis::density_summary(&agg.full_eigenvalues, nbins).ok());
        }
        let bath = self.bath_density();
        let spec = self.cfg.lattice_spec()?;
        let summary = EigenSummary {
            sites: spec.n_sites,
            system_sites: spec.n_system_sites,
            dim: spec.dim(),
            h1: self.cfg.params.h1,
            t: d.t.clone(),
            n_bath_samples: d.n_bath_samples,
            bath_error: bath.as_ref().err().map(|e| e.to_string()),
            bath: bath.ok(),
            full: full.clone(),
            completeness_error: d.per_t.iter().map(|a| a.completeness_error).collect(),
            n_samples: d.per_t.iter().map(|a| a.n_samples).collect(),
        };
        self.store.write_json("eigen/summary.json", &summary)?;
        let mut rows = Vec::new();
        let mut push = |t: String, source: &str, ds: &DensitySummary| {
            let g = &ds.fit.goodness_of_fit;
            rows.push(vec![t, source.into(), ds.fit.count.to_string(), s(ds.fit.model.mean), s(ds.fit.model.variance), s(ds.histogram_sd), s(ds.histogram_sd_stderr), s(ds.fit.kurtosis), s(g.statistic), g.dof.to_string(), s(g.p_value)]);
        };
        if let Some(b) = &summary.bath {
            push(String::new(), "bath", b);
        }
        for (k, f) in full.iter().enumerate() {
            if let Some(f) = f {
                push(s(d.t[k]), "full", f);
            }
        }
        write_csv(self.store, "eigen/density.csv", &["t", "source", "count", "mean", "variance", "histogram_sd", "histogram_sd_stderr", "kurtosis", "chi2", "dof", "p_value"], rows)?;
        Ok(summary.bath_error.map(|e| format!("bath density: {e}")))
    }

    fn overlaps(&mut self) -> Result<Option<String>, PipelineError> {
        let d = self.data()?;
        let mut sets = Vec::new();
        let mut phases = Vec::new();
        for (k, agg) in d.per_t.iter().enumerate() {
            for (j, tr) in agg.targets.iter().enumerate() {
                sets.push(CurveSet { t: d.t[k], target: j, lambda: tr.lambda, curves: tr.curves.clone() });
            }
            let total: f64 = agg.phase_counts.iter().sum();
            let uniformity = (agg.phase_counts.len() >= 2 && total > 0.0).then(|| chi_square_uniform(&agg.phase_counts));
            phases.push(PhaseRow { t: d.t[k], counts: agg.phase_counts.clone(), uniformity });
        }
        self.store.write_json("overlaps/curves.json", &sets)?;
        self.store.write_json("overlaps/phases.json", &phases)?;
        let mut rows = Vec::new();
        for c in &sets {
            for curve in &c.curves {
                for ((x, m), n) in curve.centers().iter().zip(curve.means()).zip(&curve.counts) {
                    rows.push(vec![s(c.t), c.target.to_string(), s(c.lambda), curve.mu.to_string(), s(*x), s(m), n.to_string()]);
                }
            }
        }
        write_csv(self.store, "overlaps/curves.csv", &["t", "target", "lambda", "mu", "bath_energy", "mean_abs2", "count"], rows)?;
        let rows = phases.iter().flat_map(|p| {
            let nb = p.counts.len();
            p.counts.iter().enumerate().map(move |(b, c)| {
                let centre = -std::f64::consts::PI + (b as f64 + 0.5) * 2.0 * std::f64::consts::PI / nb as f64;
                vec![s(p.t), b.to_string(), s(centre), s(*c)]
            })
        });
        write_csv(self.store, "overlaps/phases.csv", &["t", "bin", "phase", "count"], rows)?;
        Ok(None)
    }

    fn peaks(&mut self) -> Result<Vec<TPeak>, PipelineError> {
        if self.peaks.is_none() {
            let d = self.data()?;
            let mut out = Vec::new();
            for (k, agg) in d.per_t.iter().enumerate() {
                out.extend(analysis::fit_peaks(agg).into_iter().map(|row| TPeak { t: d.t[k], row }));
            }
            self.peaks = Some(out);
        }
        Ok(self.peaks.clone().expect("set above"))
    }

    fn fit(&mut self) -> Result<Option<String>, PipelineError> {
        let peaks = self.peaks()?;
        self.store.write_json("overlaps/peaks.json", &peaks)?;
        let rows = peaks.iter().map(|p| {
            let r = &p.row;
            let mut v = vec![s(p.t), r.target.to_string(), s(r.lambda), r.mu.to_string(), s(r.eps_mu), r.n_states.to_string()];
            match &r.fit {
                Some(f) => v.extend([s(f.area), s(f.stderr_area()), s(f.gamma), s(f.stderr_gamma()), s(f.eta), s(f.stderr_eta()), s(f.relative_residual), s(f.asymmetry), String::new()]),
                None => v.extend(std::iter::repeat_n(String::new(), 8).chain([r.error.clone().unwrap_or_default()])),
            }
            v
        });
        write_csv(self.store, "overlaps/peaks.csv", &["t", "target", "lambda", "mu", "eps_mu", "n_states", "area", "area_stderr", "gamma", "gamma_stderr", "eta", "eta_stderr", "relative_residual", "asymmetry", "error"], rows)?;
        let failed = peaks.iter().filter(|p| p.row.fit.is_none()).count();
        Ok((failed > 0).then(|| format!("{failed} of {} peak fits failed", peaks.len())))
    }

    fn coupling(&mut self) -> Result<Vec<TCoupling>, PipelineError> {
        if self.coupling.is_none() {
            let model = self.bath_model()?;
            let d = self.data()?;
            let out = d
                .per_t
                .iter()
                .zip(&d.t)
                .map(|(agg, &t)| match analysis::coupling_summary(agg, &model) {
                    Ok(sm) => TCoupling { t, summary: Some(sm), error: None },
                    Err(e) => TCoupling { t, summary: None, error: Some(e.to_string()) },
                })
                .collect();
            self.coupling = Some(out);
        }
        Ok(self.coupling.clone().expect("set above"))
    }

    fn xstats(&mut self) -> Result<Option<String>, PipelineError> {
        let d = self.data()?;
        let maps: Vec<TMap> = d.per_t.iter().zip(&d.t).filter_map(|(a, &t)| a.xstats.clone().map(|map| TMap { t, map })).collect();
        self.store.write_json("xstats/maps.json", &maps)?;
        let summaries = self.coupling()?;
        self.store.write_json("xstats/summary.json", &summaries)?;
        let rows = summaries.iter().map(|c| match &c.summary {
            Some(sm) => {
                let w = &sm.widths;
                let f = &sm.factorization;
                let sig: Vec<String> = f.sigma_sq.iter().flatten().map(|v| s(*v)).collect();
                vec![s(c.t), sm.n_samples.to_string(), s(w.delta_d), s(w.delta_d_stderr), s(w.delta_ad), s(w.delta_ad_stderr), s(w.delta0), s(w.delta0_stderr), s(w.delta0_corrected), s(f.residual), sig.join(";"), String::new()]
            }
            None => {
                let mut v = vec![s(c.t)];
                v.extend(std::iter::repeat_n(String::new(), 10));
                v.push(c.error.clone().unwrap_or_default());
                v
            }
        });
        write_csv(self.store, "xstats/summary.csv", &["t", "n_samples", "delta_d", "delta_d_stderr", "delta_ad", "delta_ad_stderr", "delta0", "delta0_stderr", "delta0_corrected", "factorization_residual", "sigma_sq_row_major", "error"], rows)?;
        let mut prof = Vec::new();
        let mut boxes = Vec::new();
        for m in &maps {
            for b in &m.map.blocks {
                let mut add = |kind: String, p: &eigentherm_core::xstats::Profile| {
                    for ((x, y), n) in p.centers().iter().zip(p.means()).zip(&p.counts) {
                        prof.push(vec![s(m.t), b.mu.to_string(), b.nu.to_string(), kind.clone(), s(*x), s(y), n.to_string()]);
                    }
                };
                add("diagonal".into(), &b.diagonal);
                for (k, a) in b.anti_diagonal.iter().enumerate() {
                    add(format!("anti_diagonal@{}", m.map.profile.anti_offsets[k]), a);
                }
                for (k, (mean, n)) in b.means().iter().zip(&b.counts).enumerate() {
                    if *n > 0 {
                        let (er, ec) = b.label(k);
                        boxes.push(vec![s(m.t), b.mu.to_string(), b.nu.to_string(), (k / m.map.n_boxes).to_string(), (k % m.map.n_boxes).to_string(), s(er), s(ec), s(*mean), n.to_string()]);
                    }
                }
            }
        }
        write_csv(self.store, "xstats/profiles.csv", &["t", "mu", "nu", "profile", "energy", "mean_abs2", "count"], prof)?;
        write_csv(self.store, "xstats/boxes.csv", &["t", "mu", "nu", "row_box", "col_box", "e_row", "e_col", "mean_abs2", "count"], boxes)?;
        let failed: Vec<String> = summaries.iter().filter_map(|c| c.error.clone()).collect();
        Ok((!failed.is_empty()).then(|| failed.join("; ")))
    }

    fn predictions(&mut self) -> Result<Vec<TPrediction>, PipelineError> {
        if self.predictions.is_none() {
            let bath_var = self.bath_model()?.variance;
            let coupling = self.coupling()?;
            let d = self.data()?;
            let h1 = self.cfg.params.h1;
            let mut out = Vec::new();
            for ((agg, c), &t) in d.per_t.iter().zip(&coupling).zip(&d.t) {
                let Some(sm) = &c.summary else { continue };
                let w = &sm.widths;
                for (j, tr) in agg.targets.iter().enumerate() {
                    let beta = beta_at(tr.lambda, total_variance(bath_var, t, h1));
                    let p = analysis::predict(&agg.eps, &sm.factorization.sigma_sq, t, beta, tr.lambda, w.delta0, w.delta0_stderr)
                        .map_err(|e| PipelineError::Numeric(e.to_string()))?;
                    out.push(TPrediction { t, target: j, prediction: p });
                }
            }
            self.predictions = Some(out);
        }
        Ok(self.predictions.clone().expect("set above"))
    }

    fn predict(&mut self) -> Result<Option<String>, PipelineError> {
        let preds = self.predictions()?;
        if preds.is_empty() {
            return Err(PipelineError::Numeric("no coupling summary available for any t".into()));
        }
        self.store.write_json("predictions/predictions.json", &preds)?;
        let rows = preds.iter().flat_map(|p| {
            let q = &p.prediction;
            (0..q.gamma.len()).map(move |mu| {
                vec![s(p.t), p.target.to_string(), s(q.lambda), s(q.beta), s(q.delta0), mu.to_string(), s(q.gamma[mu]), s(q.gamma_band[mu].0), s(q.gamma_band[mu].1), s(q.eta[mu]), s(q.eta_band[mu].0), s(q.eta_band[mu].1)]
            })
        });
        write_csv(self.store, "predictions/predictions.csv", &["t", "target", "lambda", "beta", "delta0", "mu", "gamma", "gamma_lo", "gamma_hi", "eta", "eta_lo", "eta_hi"], rows)?;

        let mut cmp = Vec::new();
        let total_width = self.cfg.total_width();
        if self.cfg.analysis.overlaps {
            let peaks = self.peaks()?;
            for p in &preds {
                let q = &p.prediction;
                if q.gamma.len() != 2 || q.lambda.abs() > 1.5 * total_width {
                    continue;
                }
                let fits: Vec<&LorentzianFit> = peaks.iter().filter(|x| x.t == p.t && x.row.target == p.target).filter_map(|x| x.row.fit.as_ref()).collect();
                if fits.len() != 2 {
                    continue;
                }
                let se = |a: f64, b: f64| (a * a + b * b).sqrt();
                cmp.push(Comparison::relative("gamma_1+gamma_2", Some(p.t), Some(q.lambda), fits[0].gamma + fits[1].gamma, se(fits[0].stderr_gamma(), fits[1].stderr_gamma()), q.gamma[0] + q.gamma[1], RATE_TOLERANCE));
                cmp.push(Comparison::relative("eta_1-eta_2", Some(p.t), Some(q.lambda), fits[0].eta - fits[1].eta, se(fits[0].stderr_eta(), fits[1].stderr_eta()), q.eta[0] - q.eta[1], RATE_TOLERANCE));
            }
        }
        let bath = self.bath_density()?;
        let h1 = self.cfg.params.h1;
        for c in self.coupling()? {
            let Some(sm) = &c.summary else { continue };
            let sig = &sm.factorization.sigma_sq;
            if sig.len() == 2 {
                cmp.push(Comparison::absolute("sigma_sq_11", Some(c.t), sig[0][0], 1.0 / 3.0, SIGMA_TOLERANCE));
                cmp.push(Comparison::absolute("sigma_sq_22", Some(c.t), sig[1][1], 1.0 / 3.0, SIGMA_TOLERANCE));
                cmp.push(Comparison::absolute("sigma_sq_12", Some(c.t), sig[0][1], 2.0 / 3.0, SIGMA_TOLERANCE));
            }
            // Width of the unperturbed density: bath histogram width and the two S levels.
            let sd0 = (bath.histogram_sd.powi(2) + h1 * h1).sqrt();
            let mut row = Comparison::relative("delta_d/2", Some(c.t), None, sm.widths.delta_d / 2.0, sm.widths.delta_d_stderr / 2.0, sd0, DIAGONAL_WIDTH_TOLERANCE);
            row.tolerance = format!("rel {DIAGONAL_WIDTH_TOLERANCE} of unperturbed sd");
            cmp.push(row);
            let mut row = Comparison::absolute("factorization_residual", Some(c.t), sm.factorization.residual, 0.0, FACTORIZATION_TOLERANCE);
            row.within = sm.factorization.residual < FACTORIZATION_TOLERANCE;
            row.tolerance = format!("< {FACTORIZATION_TOLERANCE}");
            cmp.push(row);
        }
        write_comparisons(self.store, "predictions/comparison", &cmp)?;
        Ok(None)
    }

    // η per level for one target: fitted when both peaks fit, else predicted.
    fn eta_for(&mut self, t: f64, target: usize) -> Result<(Vec<f64>, &'static str), PipelineError> {
        if self.cfg.analysis.overlaps {
            let fits: Vec<f64> = self.peaks()?.iter().filter(|p| p.t == t && p.row.target == target).filter_map(|p| p.row.fit.as_ref().map(|f| f.eta)).collect();
            let n_levels = 1usize << self.cfg.lattice.system_sites;
            if fits.len() == n_levels {
                return Ok((fits, "fit"));
            }
        }
        if self.cfg.analysis.predictions && self.cfg.analysis.xstats {
            if let Some(p) = self.predictions()?.iter().find(|p| p.t == t && p.target == target) {
                return Ok((p.prediction.eta.clone(), "prediction"));
            }
        }
        Ok((vec![0.0; 1 << self.cfg.lattice.system_sites], "none"))
    }

    fn rdm(&mut self) -> Result<Option<String>, PipelineError> {
        let d = self.data()?;
        let bath_var = self.bath_model()?.variance;
        let dim = self.cfg.lattice_spec()?.dim();
        let h1 = self.cfg.params.h1;
        let mut all_states = Vec::new();
        let mut ratios = Vec::new();
        let mut cmp = Vec::new();
        let mut shapes = Vec::new();
        let mut state_rows = Vec::new();
        for (k, agg) in d.per_t.iter().enumerate() {
            let t = d.t[k];
            let mut etas = Vec::new();
            let mut sources = Vec::new();
            for j in 0..agg.targets.len() {
                let (e, src) = self.eta_for(t, j)?;
                etas.push(e);
                sources.push(src);
            }
            for (j, tr) in agg.targets.iter().enumerate() {
                all_states.push(TStates { t, target: j, lambda: tr.lambda, dim, states: tr.states.clone() });
                for st in &tr.states {
                    let r = st.to_rdm();
                    let beta_fit = extract_beta(&r, &agg.eps, Some(&etas[j])).map(|b| b.beta_fit).unwrap_or(f64::NAN);
                    let p1 = if r.dim() > 1 { r.population(1) } else { f64::NAN };
                    let off = if r.dim() > 1 { r.matrix[(0, 1)].norm() } else { f64::NAN };
                    state_rows.push(vec![self.cfg.lattice.sites.to_string(), dim.to_string(), s(t), j.to_string(), s(tr.lambda), st.sample.bath.to_string(), st.sample.coupling.to_string(), st.n.to_string(), s(st.lambda), s(r.population(0)), s(p1), s(off), s(beta_fit)]);
                }
            }
            let tv = total_variance(bath_var, t, h1);
            match analysis::canonical_ratios(agg, &etas, tv) {
                Ok(rows) => {
                    for row in rows {
                        for pr in &row.pairs {
                            cmp.push(ratio_comparison(t, row.lambda, pr));
                        }
                        ratios.push(TRatios { t, dim, eta_source: sources[row.target].into(), row });
                    }
                }
                Err(e) => return Err(PipelineError::Numeric(format!("canonical ratios at t = {t}: {e}"))),
            }
            shapes.extend(lineshapes(t, agg));
        }
        for sh in &shapes {
            if let Some(c) = self.lineshape_comparisons(sh, d)? {
                cmp.extend(c);
            }
        }
        self.store.write_json("rdm/states.json", &all_states)?;
        write_csv(self.store, "rdm/states.csv", &["L", "N", "t", "target", "lambda_target", "bath", "coupling", "n", "lambda_n", "rho11", "rho22", "abs_rho12", "beta_fit"], state_rows)?;
        self.store.write_json("rdm/ratios.json", &ratios)?;
        let rows = ratios.iter().flat_map(|r| {
            r.row.pairs.iter().map(move |p| vec![s(r.t), r.dim.to_string(), r.row.target.to_string(), s(r.row.lambda), s(r.row.beta), r.row.n_states.to_string(), p.mu.to_string(), p.nu.to_string(), s(p.ratio), s(p.stderr), s(p.expected), s(p.relative_deviation), r.eta_source.clone()])
        });
        write_csv(self.store, "rdm/ratios.csv", &["t", "N", "target", "lambda", "beta", "n_states", "mu", "nu", "ratio", "stderr", "expected", "relative_deviation", "eta_source"], rows)?;
        self.store.write_json("rdm/lineshapes.json", &shapes)?;
        let rows = shapes.iter().flat_map(|sh| {
            let means = sh.shape.means();
            sh.shape.centers().into_iter().zip(means).zip(sh.shape.counts.clone()).map(move |((w, m), n)| vec![s(sh.t), sh.target.to_string(), s(sh.lambda), sh.shape.mu.to_string(), sh.shape.nu.to_string(), s(w), s(m), n.to_string()])
        });
        write_csv(self.store, "rdm/lineshapes.csv", &["t", "target", "lambda", "mu", "nu", "omega", "mean_abs2", "count"], rows)?;
        write_comparisons(self.store, "rdm/comparison", &cmp)?;
        Ok(None)
    }

    fn lineshape_comparisons(&mut self, sh: &TLineshape, d: &CampaignData) -> Result<Option<Vec<Comparison>>, PipelineError> {
        let Some(fit) = &sh.fit else { return Ok(None) };
        let (mu, nu) = (sh.shape.mu, sh.shape.nu);
        let mut out = Vec::new();
        if self.cfg.analysis.predictions && self.cfg.analysis.xstats {
            if let Some(p) = self.predictions()?.iter().find(|p| p.t == sh.t && p.target == sh.target) {
                let g = p.prediction.gamma[mu] + p.prediction.gamma[nu];
                out.push(Comparison::relative(&format!("lineshape_width_{mu}{nu}"), Some(sh.t), Some(sh.lambda), fit.gamma, fit.covariance[1][1].max(0.0).sqrt(), g, RATE_TOLERANCE));
            }
        }
        if self.cfg.analysis.overlaps {
            let peaks = self.peaks()?;
            let gamma = |m: usize| peaks.iter().find(|p| p.t == sh.t && p.row.target == sh.target && p.row.mu == m).and_then(|p| p.row.fit.as_ref()).map(|f| f.gamma);
            if let (Some(gm), Some(gn)) = (gamma(mu), gamma(nu)) {
                let se = fit.covariance[1][1].max(0.0).sqrt();
                out.push(Comparison::relative(&format!("lineshape_width_{mu}{nu}_vs_peaks"), Some(sh.t), Some(sh.lambda), fit.gamma, se, gm + gn, RATE_TOLERANCE));
            }
        }
        let (eta, src) = self.eta_for(sh.t, sh.target)?;
        if src == "fit" {
            let k = d.t.iter().position(|&x| x == sh.t).expect("t from the campaign");
            let eps = &d.per_t[k].eps;
            let expected = (eps[nu] - eta[nu]) - (eps[mu] - eta[mu]);
            let se = fit.covariance[2][2].max(0.0).sqrt();
            out.push(Comparison {
                quantity: format!("lineshape_center_{mu}{nu}"),
                t: Some(sh.t),
                lambda: Some(sh.lambda),
                measured: fit.center,
                stderr: se,
                expected,
                tolerance: "2 stderr".into(),
                within: (fit.center - expected).abs() <= 2.0 * se,
            });
        }
        Ok(Some(out))
    }
}

fn lineshapes(t: f64, agg: &EnsembleAggregate) -> Vec<TLineshape> {
    let mut out = Vec::new();
    for (j, tr) in agg.targets.iter().enumerate() {
        for sh in &tr.lineshapes {
            let (fit, error) = match sh.fit() {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(TLineshape { t, target: j, lambda: tr.lambda, shape: sh.clone(), fit, error });
        }
    }
    out
}

fn ratio_comparison(t: f64, lambda: f64, p: &PairRatio) -> Comparison {
    let mut c = Comparison::relative(&format!("rho_{}{}/rho_{}{}", p.mu + 1, p.mu + 1, p.nu + 1, p.nu + 1), Some(t), Some(lambda), p.ratio, p.stderr, p.expected, RATIO_TOLERANCE);
    c.within = p.relative_deviation.abs() <= RATIO_TOLERANCE;
    c
}

fn write_comparisons(store: &ResultStore, stem: &str, cmp: &[Comparison]) -> Result<(), PipelineError> {
    store.write_json(&format!("{stem}.json"), &cmp)?;
    let opt = |v: Option<f64>| v.map(s).unwrap_or_default();
    let rows = cmp.iter().map(|c| vec![c.quantity.clone(), opt(c.t), opt(c.lambda), s(c.measured), s(c.stderr), s(c.expected), c.tolerance.clone(), c.within.to_string()]);
    write_csv(store, &format!("{stem}.csv"), &["quantity", "t", "lambda", "measured", "stderr", "expected", "tolerance", "within"], rows)
}
