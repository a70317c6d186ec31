//! Report emission from whatever stages are present in a store.
//!
//! Every section either renders its plots and table rows or is marked
//! unavailable with the reason. The report never recomputes samples.

use std::fmt::Write as _;
use std::path::PathBuf;

use eigentherm_core::rdm::SizeEnsemble;
use eigentherm_core::spectra::DensityModel;
use eigentherm_core::stats::chi_square_normal;

use crate::campaign::PipelineError;
use crate::plot::{heatmap, Band, Series, XyPlot};
use crate::stages::{Comparison, CurveSet, EigenSummary, PhaseRow, TCoupling, TLineshape, TMap, TPeak, TPrediction, TRatios, TStates, SIGNIFICANCE};
use crate::store::ResultStore;

type Section = Result<Vec<String>, String>;

struct Report<'a> {
    store: &'a ResultStore,
    include: Vec<ResultStore>,
    summary_rows: Vec<Comparison>,
    plots: usize,
}

fn fmt(v: f64) -> String {
    if !v.is_finite() {
        return "-".into();
    }
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

impl Report<'_> {
    fn plot(&mut self, name: &str, svg: Result<String, String>) -> Result<String, String> {
        let svg = svg?;
        self.store.write_atomic(&format!("plots/{name}.svg"), svg.as_bytes()).map_err(|e| e.to_string())?;
        self.plots += 1;
        Ok(format!("![{name}](plots/{name}.svg)"))
    }

    fn spectra(&mut self) -> Section {
        let es: EigenSummary = self.store.read_json("eigen/summary.json").ok_or("stage diagonalize has not run")?;
        let mut md = vec![format!("{} sites ({} in S), N = {}, {} bath samples.", es.sites, es.system_sites, es.dim, es.n_bath_samples)];
        let Some(b) = &es.bath else {
            return Err(format!("bath density fit failed: {}", es.bath_error.unwrap_or_default()));
        };
        let g = &b.fit.goodness_of_fit;
        md.push(format!("Bath: variance {}, histogram sd {} ± {}, kurtosis {}, chi-square p = {}.", fmt(b.fit.model.variance), fmt(b.histogram_sd), fmt(b.histogram_sd_stderr), fmt(b.fit.kurtosis), fmt(g.p_value)));
        self.summary_rows.push(Comparison {
            quantity: "bath_density_gaussian_p".into(),
            t: None,
            lambda: None,
            measured: g.p_value,
            stderr: f64::NAN,
            expected: SIGNIFICANCE,
            tolerance: format!("p > {SIGNIFICANCE}"),
            within: g.p_value > SIGNIFICANCE,
        });
        for (k, &t) in es.t.iter().enumerate() {
            let err = es.completeness_error[k];
            self.summary_rows.push(Comparison { quantity: "completeness".into(), t: Some(t), lambda: None, measured: err, stderr: f64::NAN, expected: 0.0, tolerance: "abs 1e-10".into(), within: err <= 1e-10 });
        }
        if let Some(values) = self.store.read_f64le("eigen/bath.f64le") {
            let (x, y) = eigentherm_core::fit::density_histogram(&values, 60);
            let m = DensityModel { mean: b.fit.model.mean, variance: b.fit.model.variance };
            let mut p = XyPlot::new("Bath spectral density", "E", "density");
            p.series.push(Series::points("histogram", x.iter().copied().zip(y.iter().copied()).collect(), 0));
            p.series.push(Series::line("Gaussian fit", x.iter().map(|&e| (e, m.density(e))).collect(), 1));
            md.push(self.plot("density", p.render())?);
            let test = chi_square_normal(&values, m.mean, m.variance.sqrt(), 50, 2);
            md.push(format!("Re-tested on 50 equiprobable bins: chi-square {} (dof {}).", fmt(test.statistic), test.dof));
        }
        Ok(md)
    }

    fn peaks(&mut self) -> Section {
        let sets: Vec<CurveSet> = self.store.read_json("overlaps/curves.json").ok_or("stage overlaps has not run")?;
        let peaks: Vec<TPeak> = self.store.read_json("overlaps/peaks.json").unwrap_or_default();
        let mut md = Vec::new();
        let t_values = distinct(sets.iter().map(|s| s.t));
        for set in &sets {
            let ti = t_values.iter().position(|&t| t == set.t).unwrap_or(0);
            let mut p = XyPlot::new(format!("Overlap peaks, t = {}, λ = {}", fmt(set.t), fmt(set.lambda)), "bath energy E_i", "mean |<φ_μi|ψ_n>|²");
            for c in &set.curves {
                let pts: Vec<(f64, f64)> = c.centers().into_iter().zip(c.means()).collect();
                p.series.push(Series::points(format!("μ = {}", c.mu), pts.clone(), c.mu));
                if let Some(f) = peaks.iter().find(|x| x.t == set.t && x.row.target == set.target && x.row.mu == c.mu).and_then(|x| x.row.fit.as_ref()) {
                    let curve = pts.iter().map(|&(e, _)| (e, f.area * f.gamma / std::f64::consts::PI / ((e - f.center).powi(2) + f.gamma * f.gamma))).collect();
                    p.series.push(Series::line("", curve, c.mu));
                }
            }
            md.push(self.plot(&format!("peaks_t{ti}_l{}", set.target), p.render())?);
        }
        if peaks.is_empty() {
            md.push("Peak fits unavailable: stage fit has not run.".into());
        } else {
            md.push("| t | λ | μ | states | A | γ | η | residual |".into());
            md.push("|---|---|---|---|---|---|---|---|".into());
            for p in &peaks {
                let r = &p.row;
                match &r.fit {
                    Some(f) => md.push(format!("| {} | {} | {} | {} | {} | {} ± {} | {} ± {} | {} |", fmt(p.t), fmt(r.lambda), r.mu, r.n_states, fmt(f.area), fmt(f.gamma), fmt(f.stderr_gamma()), fmt(f.eta), fmt(f.stderr_eta()), fmt(f.relative_residual))),
                    None => md.push(format!("| {} | {} | {} | {} | fit failed: {} |||||", fmt(p.t), fmt(r.lambda), r.mu, r.n_states, r.error.clone().unwrap_or_default())),
                }
            }
        }
        Ok(md)
    }

    fn rates(&mut self) -> Section {
        let peaks: Vec<TPeak> = self.store.read_json("overlaps/peaks.json").ok_or("stage fit has not run")?;
        let preds: Vec<TPrediction> = self.store.read_json("predictions/predictions.json").unwrap_or_default();
        let mut md = Vec::new();
        let ts = distinct(peaks.iter().map(|p| p.t));
        let fitted = |t: f64, mu: usize| -> Vec<(f64, f64, f64)> {
            peaks.iter().filter(|p| p.t == t && p.row.mu == mu).filter_map(|p| p.row.fit.as_ref().map(|f| (p.row.lambda, f.gamma, f.eta))).collect()
        };
        for (k, &t) in ts.iter().enumerate() {
            for (name, pick) in [("gamma", 0usize), ("eta", 1)] {
                let mut p = XyPlot::new(format!("{name}_μ against λ, t = {}", fmt(t)), "λ_n", name);
                for mu in 0..2 {
                    let pts = fitted(t, mu).iter().map(|&(l, g, e)| (l, if pick == 0 { g } else { e })).collect();
                    p.series.push(Series::points(format!("measured μ = {mu}"), pts, mu));
                    let band: Vec<(f64, f64, f64)> = preds
                        .iter()
                        .filter(|q| q.t == t && q.prediction.gamma.len() > mu)
                        .map(|q| {
                            let b = if pick == 0 { q.prediction.gamma_band[mu] } else { q.prediction.eta_band[mu] };
                            (q.prediction.lambda, b.0, b.1)
                        })
                        .collect();
                    if !band.is_empty() {
                        let line = preds.iter().filter(|q| q.t == t && q.prediction.gamma.len() > mu).map(|q| (q.prediction.lambda, if pick == 0 { q.prediction.gamma[mu] } else { q.prediction.eta[mu] })).collect();
                        p.series.push(Series::line(format!("predicted μ = {mu}"), line, mu));
                        p.bands.push(Band { label: format!("±1 stderr of Δ₀, μ = {mu}"), points: band, colour: mu });
                    }
                }
                md.push(self.plot(&format!("{name}_vs_lambda_t{k}"), p.render())?);
            }
        }
        if ts.len() >= 2 {
            let lambdas = distinct(peaks.iter().map(|p| p.row.lambda));
            for (name, pick) in [("gamma", 0usize), ("eta", 1)] {
                let mut p = XyPlot::new(format!("{name}_μ against t"), "t", name);
                for (j, &l) in lambdas.iter().enumerate() {
                    for mu in 0..2 {
                        let pts = peaks.iter().filter(|x| x.row.lambda == l && x.row.mu == mu).filter_map(|x| x.row.fit.as_ref().map(|f| (x.t, if pick == 0 { f.gamma } else { f.eta }))).collect();
                        p.series.push(Series::points(format!("λ = {}, μ = {mu}", fmt(l)), pts, 2 * j + mu));
                    }
                }
                md.push(self.plot(&format!("{name}_vs_t"), p.render())?);
            }
        }
        Ok(md)
    }

    fn coupling(&mut self) -> Section {
        let maps: Vec<TMap> = self.store.read_json("xstats/maps.json").ok_or("stage xstats has not run")?;
        let summaries: Vec<TCoupling> = self.store.read_json("xstats/summary.json").unwrap_or_default();
        let mut md = Vec::new();
        for s in &summaries {
            match &s.summary {
                Some(sm) => {
                    let w = &sm.widths;
                    md.push(format!(
                        "t = {}: Δ_d = {} ± {}, Δ_ad = {} ± {}, Δ₀ = {} ± {} (density-corrected {}), σ² = {:?}, factorisation residual {} over {} samples.",
                        fmt(s.t), fmt(w.delta_d), fmt(w.delta_d_stderr), fmt(w.delta_ad), fmt(w.delta_ad_stderr), fmt(w.delta0), fmt(w.delta0_stderr), fmt(w.delta0_corrected),
                        sm.factorization.sigma_sq.iter().map(|r| r.iter().map(|v| fmt(*v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
                        fmt(sm.factorization.residual), sm.n_samples
                    ));
                }
                None => md.push(format!("t = {}: coupling summary failed: {}", fmt(s.t), s.error.clone().unwrap_or_default())),
            }
        }
        let Some(m) = maps.first() else { return Err("no variance maps stored".into()) };
        let map = &m.map;
        let nb = map.n_boxes;
        for b in &map.blocks {
            let v: Vec<f64> = b.means().iter().map(|x| if *x > 0.0 { x.log10() } else { f64::NAN }).collect();
            let svg = heatmap(&format!("log10 mean |X|², block ({}, {}), t = {}", b.mu, b.nu, fmt(m.t)), "bath box j", "bath box i", (0.0, nb as f64), (0.0, nb as f64), nb, nb, &v);
            md.push(self.plot(&format!("xvariance_{}{}", b.mu, b.nu), svg)?);
        }
        let diag = map.pooled_diagonal();
        let mut p = XyPlot::new("Inverse diagonal profile", "E_i + E_j", "1 / mean |X|²");
        p.series.push(Series::points("pooled blocks", diag.centers().into_iter().zip(diag.means().into_iter().map(|v| 1.0 / v)).collect(), 0));
        md.push(self.plot("xprofile_diagonal", p.render())?);
        let anti = map.pooled_anti_diagonal(0);
        let mut p = XyPlot::new("Anti-diagonal profile", "E_i - E_j", "mean |X|²");
        p.series.push(Series::points("pooled blocks", anti.centers().into_iter().zip(anti.means()).collect(), 0));
        if let Some(sm) = summaries.first().and_then(|s| s.summary.as_ref()) {
            // Shape only: the Gaussian is scaled to the central bins.
            let peak = anti.means().iter().zip(anti.centers()).filter(|(v, c)| v.is_finite() && c.abs() < 3.0 * anti.bin_width).map(|(v, _)| *v).fold(0.0, f64::max);
            let w = sm.widths.delta_ad;
            p.series.push(Series::line("Gaussian of fitted width", anti.centers().into_iter().map(|x| (x, peak * (-x * x / (2.0 * w * w)).exp())).collect(), 1));
        }
        md.push(self.plot("xprofile_anti_diagonal", p.render())?);
        Ok(md)
    }

    fn ratios(&mut self) -> Section {
        let own: Vec<TRatios> = self.store.read_json("rdm/ratios.json").ok_or("stage rdm has not run")?;
        let mut md = Vec::new();
        let mut p = XyPlot::new("Canonical population ratio", "λ_n", "mean ρ₁₁ / mean ρ₂₂");
        for (k, t) in distinct(own.iter().map(|r| r.t)).into_iter().enumerate() {
            let rows: Vec<&TRatios> = own.iter().filter(|r| r.t == t).collect();
            let pick = |f: fn(&eigentherm_core::rdm::PairRatio) -> f64| rows.iter().filter_map(|r| r.row.pairs.first().map(|pr| (r.row.lambda, f(pr)))).collect::<Vec<_>>();
            p.series.push(Series::points(format!("measured, t = {}", fmt(t)), pick(|pr| pr.ratio), 2 * k));
            p.series.push(Series::line(format!("Boltzmann, t = {}", fmt(t)), pick(|pr| pr.expected), 2 * k + 1));
        }
        md.push(self.plot("ratios_vs_lambda", p.render())?);
        let eta_src = distinct_str(own.iter().map(|r| r.eta_source.clone()));
        md.push(format!("Level shifts taken from: {}.", eta_src.join(", ")));

        let mut sets = vec![own];
        for s in &self.include {
            if let Some(r) = s.read_json::<Vec<TRatios>>("rdm/ratios.json") {
                sets.push(r);
            }
        }
        if sets.len() >= 2 {
            let mut p = XyPlot::new("Population ratio against N", "log10 N", "mean ρ₁₁ / mean ρ₂₂");
            let lambdas = distinct(sets[0].iter().map(|r| r.row.lambda));
            for (j, &l) in lambdas.iter().enumerate() {
                let mut pts: Vec<(f64, f64)> = sets.iter().flat_map(|rows| rows.iter().filter(|r| r.row.lambda == l).filter_map(|r| r.row.pairs.first().map(|pr| ((r.dim as f64).log10(), pr.ratio)))).collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                p.series.push(Series::points(format!("λ = {}", fmt(l)), pts, j));
            }
            md.push(self.plot("ratios_vs_n", p.render())?);
        }
        Ok(md)
    }

    fn scaling(&mut self) -> Section {
        let mut ensembles = Vec::new();
        let stores: Vec<&ResultStore> = std::iter::once(self.store).chain(self.include.iter()).collect();
        for s in stores {
            let Some(states) = s.read_json::<Vec<TStates>>("rdm/states.json") else { continue };
            let Some(first_t) = states.first().map(|x| x.t) else { continue };
            let dim = states[0].dim;
            let mut samples = Vec::new();
            for ts in states.iter().filter(|x| x.t == first_t) {
                let mut groups: Vec<(eigentherm_core::model::SampleIndex, Vec<_>)> = Vec::new();
                for st in &ts.states {
                    match groups.last_mut() {
                        Some((i, g)) if *i == st.sample => g.push(st.to_rdm()),
                        _ => groups.push((st.sample, vec![st.to_rdm()])),
                    }
                }
                samples.extend(groups.into_iter().map(|(_, g)| g));
            }
            ensembles.push(SizeEnsemble { dim, samples });
        }
        ensembles.sort_by_key(|e| e.dim);
        let sc = eigentherm_core::rdm::offdiag_scaling(&ensembles).map_err(|e| format!("needs reduced states from at least three sizes (pass --include): {e}"))?;
        let mut md = vec![format!(
            "Slope of ln mean|ρ₁₂| against ln N: {} ± {}. Variance slopes: ρ₁₁ {} ± {}, ρ₁₂ {} ± {}.",
            fmt(sc.kappa.slope), fmt(sc.kappa.stderr_slope), fmt(sc.var_rho11_slope.slope), fmt(sc.var_rho11_slope.stderr_slope), fmt(sc.var_rho12_slope.slope), fmt(sc.var_rho12_slope.stderr_slope)
        )];
        let logn: Vec<f64> = sc.dims.iter().map(|&d| (d as f64).log10()).collect();
        let mut p = XyPlot::new("Off-diagonal scaling", "log10 N", "log10 value");
        p.series.push(Series::points("mean |ρ₁₂|", logn.iter().zip(&sc.mean_abs_rho12).map(|(x, y)| (*x, y.log10())).collect(), 0));
        p.series.push(Series::points("Var ρ₁₁", logn.iter().zip(&sc.var_rho11).map(|(x, y)| (*x, y.log10())).collect(), 1));
        p.series.push(Series::points("Var ρ₁₂", logn.iter().zip(&sc.var_rho12).map(|(x, y)| (*x, y.log10())).collect(), 2));
        md.push(self.plot("offdiag_scaling", p.render())?);
        Ok(md)
    }

    fn lineshapes(&mut self) -> Section {
        let shapes: Vec<TLineshape> = self.store.read_json("rdm/lineshapes.json").ok_or("stage rdm has not run")?;
        if shapes.is_empty() {
            return Err("no transition lineshapes configured".into());
        }
        let mut md = Vec::new();
        let ts = distinct(shapes.iter().map(|s| s.t));
        for (k, sh) in shapes.iter().enumerate() {
            let ti = ts.iter().position(|&t| t == sh.t).unwrap_or(0);
            let mut p = XyPlot::new(format!("Transition {}→{}, t = {}, λ = {}", sh.shape.mu, sh.shape.nu, fmt(sh.t), fmt(sh.lambda)), "ω = λ_m - λ_n", "mean |S|²");
            let pts: Vec<(f64, f64)> = sh.shape.centers().into_iter().zip(sh.shape.means()).collect();
            p.series.push(Series::points("binned", pts.clone(), 0));
            match &sh.fit {
                Some(f) => {
                    p.series.push(Series::line("Lorentzian fit", pts.iter().map(|&(w, _)| (w, f.area * f.gamma / std::f64::consts::PI / ((w - f.center).powi(2) + f.gamma * f.gamma))).collect(), 1));
                    md.push(format!("{}→{} at t = {}, λ = {}: centre {} ± {}, half-width {} ± {}.", sh.shape.mu, sh.shape.nu, fmt(sh.t), fmt(sh.lambda), fmt(f.center), fmt(f.covariance[2][2].max(0.0).sqrt()), fmt(f.gamma), fmt(f.covariance[1][1].max(0.0).sqrt())));
                }
                None => md.push(format!("{}→{} at λ = {}: fit failed: {}", sh.shape.mu, sh.shape.nu, fmt(sh.lambda), sh.error.clone().unwrap_or_default())),
            }
            md.push(self.plot(&format!("lineshape_t{ti}_{k}"), p.render())?);
        }
        Ok(md)
    }

    fn phases(&mut self) -> Section {
        let rows: Vec<PhaseRow> = self.store.read_json("overlaps/phases.json").ok_or("stage overlaps has not run")?;
        let mut md = Vec::new();
        let mut p = XyPlot::new("Overlap phases", "phase", "count");
        for (k, r) in rows.iter().enumerate() {
            let nb = r.counts.len();
            if nb == 0 {
                continue;
            }
            let pts = r.counts.iter().enumerate().map(|(b, c)| (-std::f64::consts::PI + (b as f64 + 0.5) * 2.0 * std::f64::consts::PI / nb as f64, *c)).collect();
            p.series.push(Series::points(format!("t = {}", fmt(r.t)), pts, k));
            if let Some(u) = &r.uniformity {
                md.push(format!("t = {}: chi-square {} on {} dof, p = {}.", fmt(r.t), fmt(u.statistic), u.dof, fmt(u.p_value)));
                self.summary_rows.push(Comparison { quantity: "phase_uniformity_p".into(), t: Some(r.t), lambda: None, measured: u.p_value, stderr: f64::NAN, expected: SIGNIFICANCE, tolerance: format!("p > {SIGNIFICANCE}"), within: u.p_value > SIGNIFICANCE });
            }
        }
        if p.series.is_empty() {
            return Err("phase histograms disabled".into());
        }
        md.push(self.plot("phases", p.render())?);
        Ok(md)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn distinct_str(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Write `report.md` and the plots. Returns a one-line status.
/// Paragraphs are separated by blank lines; consecutive table rows are not.
fn join_blocks(lines: &[String]) -> String {
    let mut out = String::new();
    for (k, l) in lines.iter().enumerate() {
        if k > 0 {
            out.push_str(if l.starts_with('|') && lines[k - 1].starts_with('|') { "\n" } else { "\n\n" });
        }
        out.push_str(l);
    }
    out
}

pub fn emit_report(store: &ResultStore, include: &[PathBuf]) -> Result<String, PipelineError> {
    let include = include.iter().map(|p| ResultStore::open(p)).collect::<Result<Vec<_>, _>>()?;
    let mut r = Report { store, include, summary_rows: Vec::new(), plots: 0 };
    let titles = ["Spectral density", "Overlap peaks", "Rates and shifts", "Coupling statistics", "Canonical ratios", "Off-diagonal scaling", "Transition lineshapes", "Overlap phases"];
    let mut md = String::from("# eigentherm report\n\n");
    if let Some(m) = store.read_manifest() {
        let _ = writeln!(md, "Config hash `{}`, tool version {}.\n", m.config_hash, m.tool_version);
    }
    let mut bodies = Vec::new();
    let mut unavailable = 0;
    for (k, title) in titles.into_iter().enumerate() {
        let section = match k {
            0 => r.spectra(),
            1 => r.peaks(),
            2 => r.rates(),
            3 => r.coupling(),
            4 => r.ratios(),
            5 => r.scaling(),
            6 => r.lineshapes(),
            _ => r.phases(),
        };
        let body = match section {
            Ok(lines) => join_blocks(&lines),
            Err(why) => {
                unavailable += 1;
                format!("_Unavailable: {why}._")
            }
        };
        bodies.push(format!("## {title}\n\n{body}\n"));
    }
    let mut rows = r.summary_rows.clone();
    for rel in ["predictions/comparison.json", "rdm/comparison.json"] {
        rows.extend(store.read_json::<Vec<Comparison>>(rel).unwrap_or_default());
    }
    md.push_str("## Summary\n\n");
    if rows.is_empty() {
        md.push_str("_Unavailable: no comparisons stored._\n\n");
    } else {
        md.push_str("| quantity | t | λ | measured | stderr | expected | tolerance | within |\n|---|---|---|---|---|---|---|---|\n");
        for c in &rows {
            let o = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "-".into());
            let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} | {} | {} |", c.quantity, o(c.t), o(c.lambda), fmt(c.measured), fmt(c.stderr), fmt(c.expected), c.tolerance, if c.within { "yes" } else { "NO" });
        }
        md.push('\n');
    }
    for b in bodies {
        md.push_str(&b);
        md.push('\n');
    }
    store.write_atomic("report.md", md.as_bytes())?;
    Ok(format!("{} plots, {unavailable} of 8 sections unavailable", r.plots))
}
