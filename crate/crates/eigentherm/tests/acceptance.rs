//! Acceptance run: one PASS/FAIL line per criterion C1-C12.
//!
//! The default profile is sized for one workstation core (about half an
//! hour). `EIGENTHERM_ACCEPTANCE=full` switches to the 13-site profile.
//! Criterion ids on the command line restrict the run, e.g.
//! `cargo test --test acceptance -- C11 C12`.
//!
//! Criteria in `EXPECTED_FAIL` are known not to hold at desk sizes. Their
//! lines still read FAIL. The run fails when any outcome differs from its
//! expectation; an unexpected pass prints XPASS.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use eigentherm::analysis::{beta_at, canonical_ratios, coupling_summary, fit_peaks, predict, size_scaling, total_variance, CouplingSummary};
use eigentherm::ensemble::{aggregate, run_samples, EnsembleAggregate, SampleOptions, SampleResult, XStatsSpec};
use eigentherm_core::model::{build_lattice, sample_hamiltonian, Geometry, LatticeSpec, ModelParams, SampleIndex};
use eigentherm_core::overlaps::{compute_overlaps, fit_binned_peak};
use eigentherm_core::quad::GaussLegendre;
use eigentherm_core::rmt::{
    casati_girko_step, chi_from_wieltjes, erfi_scaled, large_subsystem_gamma_eta, nesting_residual, predict_eta, predict_gamma, tau_model,
    two_level_sigma, wieltjes, Kernel, LargeSubsystemParams, PredictionInput,
};
use eigentherm_core::spectra::{diagonalize, fit_gaussian_density, histogram_width, DensityModel, SourceTag};
use eigentherm_core::stats::{chi_square_normal, chi_square_uniform, kurtosis, linear_fit, proportional_fit};
use eigentherm_core::xstats::ProfileSpec;

/// Criteria that fail at the desk profile; see the decisions ledger.
const EXPECTED_FAIL: &[&str] = &["C3", "C5", "C7", "C8"];

const H1: f64 = 0.1;
const SEED: u64 = 1;
const MAX_DIM: usize = 1 << 14;

const C1_EIGEN_REL: f64 = 1e-10;
const C1_PERMUTATION_TOL: f64 = 1e-8;
const C2_COMPLETENESS: f64 = 1e-10;
const C3_P_MIN: f64 = 0.01;
const C3_BINS: usize = 50;
const C4_SIGMA_ABS: f64 = 0.05;
const C4_DELTA_D_REL: f64 = 0.05;
const C4_FACTORIZATION: f64 = 0.10;
const C5_SYNTH_REL: f64 = 1e-6;
const C5_AREA_SIGMAS: f64 = 2.0;
const C5_SLOPE_TOL: f64 = 0.15;
const C6_R2_MIN: f64 = 0.99;
const C7_REL: f64 = 0.25;
const C7_BULK: f64 = 1.5;
const C8_REL: f64 = 0.10;
const C8_SIGMAS: f64 = 2.0;
const C9_KAPPA: (f64, f64) = (-0.65, -0.40);
const C9_VARIANCE: (f64, f64) = (-1.2, -0.8);
const C10_P_MIN: f64 = 0.01;
const C10_BINS: usize = 50;
const C10_MIN_PAIRS: u64 = 1000;
const C11_ERFI: f64 = 1e-8;
const C11_KRAMERS_KRONIG: f64 = 1e-6;
const C11_TAU_NORM: f64 = 1e-6;
const C11_REDUCTION: f64 = 1e-6;
const C11_NESTING: f64 = 1e-2;
const C11_NESTING_RATIO: (f64, f64) = (8.0, 12.5);
const C12_T_OVER_DELTA0: f64 = 1e-3;
const C12_CHANGE: f64 = 1e-3;
const C12_WIDTH_REL: f64 = 0.01;

/// Lattice sizes and ensemble sizes. Sample counts are bath draws; every
/// draw carries two coupling draws.
struct Profile {
    name: &'static str,
    c1_sites: usize,
    c2_sites: Vec<usize>,
    /// Coupling statistics and bath spectra (C3, C4).
    x_sites: usize,
    x_draws: u64,
    x_t: f64,
    box_elements: usize,
    /// t-scan (C5 regression, C6).
    grid_sites: usize,
    t_grid: Vec<f64>,
    grid_draws: u64,
    /// Main ensemble (C5 areas, C7, C10).
    main_sites: usize,
    main_t: f64,
    main_draws: u64,
    /// Size series at `main_t` (C8, C9).
    sizes: Vec<(usize, u64)>,
    targets: Vec<f64>,
    window: f64,
}

impl Profile {
    fn desk() -> Self {
        Profile {
            name: "desk",
            c1_sites: 10,
            c2_sites: vec![10, 11, 12],
            x_sites: 11,
            x_draws: 50,
            x_t: 2.5e-3,
            box_elements: 16,
            grid_sites: 11,
            t_grid: vec![5e-3, 7.5e-3, 1e-2, 1.25e-2],
            grid_draws: 8,
            main_sites: 11,
            main_t: 1e-2,
            main_draws: 16,
            sizes: vec![(10, 20), (11, 16), (12, 4)],
            targets: vec![-1.0, -0.5, 0.0, 0.5],
            window: 0.05,
        }
    }

    fn full() -> Self {
        Profile {
            name: "full",
            c1_sites: 10,
            c2_sites: vec![10, 11, 12, 13],
            x_sites: 13,
            x_draws: 50,
            x_t: 2.5e-3,
            box_elements: 16,
            grid_sites: 12,
            t_grid: vec![2.5e-3, 5e-3, 7.5e-3, 1e-2],
            grid_draws: 16,
            main_sites: 13,
            main_t: 5e-3,
            main_draws: 16,
            sizes: vec![(10, 50), (11, 25), (12, 16), (13, 16)],
            targets: vec![-1.0, -0.5, 0.0, 0.5],
            window: 0.03,
        }
    }
}

fn lattice(sites: usize) -> LatticeSpec {
    build_lattice(sites, 1, &Geometry::Ladder).expect("ladder lattice")
}

fn indices(from: u64, to: u64) -> Vec<SampleIndex> {
    (from..to).flat_map(|bath| (0..2).map(move |coupling| SampleIndex { bath, coupling })).collect()
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Full,
    Coupling,
}

/// Coupling statistics, fitted bath density and pooled bath eigenvalues.
type CouplingData = (CouplingSummary, DensityModel, Vec<f64>);

/// Sample results shared between criteria, extended draw by draw.
struct Samples<'p> {
    profile: &'p Profile,
    store: BTreeMap<(Kind, usize, u64), Vec<SampleResult>>,
    coupling: Option<Result<CouplingData, String>>,
}

impl<'p> Samples<'p> {
    fn options(&self, kind: Kind, t: f64) -> SampleOptions {
        let p = self.profile;
        match kind {
            Kind::Full => SampleOptions {
                targets: p.targets.clone(),
                window: p.window,
                max_states: None,
                curve_half_range: 30.0 * t,
                curve_bins: 120,
                overlaps: true,
                rdm: true,
                lineshapes: Vec::new(),
                xstats: None,
                phase_bins: C10_BINS,
                spectrum: false,
                max_dim: MAX_DIM,
            },
            Kind::Coupling => SampleOptions {
                targets: Vec::new(),
                window: p.window,
                max_states: None,
                curve_half_range: 1.0,
                curve_bins: 1,
                overlaps: false,
                rdm: false,
                lineshapes: Vec::new(),
                xstats: Some(XStatsSpec { box_elements: p.box_elements, profile: ProfileSpec::default() }),
                phase_bins: 0,
                spectrum: false,
                max_dim: MAX_DIM,
            },
        }
    }

    fn results(&mut self, kind: Kind, sites: usize, t: f64, draws: u64) -> Result<&[SampleResult], String> {
        let opts = self.options(kind, t);
        let have = self.store.get(&(kind, sites, t.to_bits())).map_or(0, |v| v.len() as u64 / 2);
        if have < draws {
            let spec = lattice(sites);
            let params = ModelParams::normalized(&spec, t, H1, SEED).map_err(|e| e.to_string())?;
            let new = run_samples(&spec, &params, &indices(have, draws), &opts, workers()).map_err(|e| e.to_string())?;
            self.store.entry((kind, sites, t.to_bits())).or_default().extend(new);
        }
        Ok(&self.store[&(kind, sites, t.to_bits())][..2 * draws as usize])
    }

    fn ensemble(&mut self, sites: usize, t: f64, draws: u64) -> Result<EnsembleAggregate, String> {
        aggregate(self.results(Kind::Full, sites, t, draws)?).map_err(|e| e.to_string())
    }

    /// Bath eigenvalues of every distinct draw of the coupling ensemble.
    fn bath_spectra(&mut self) -> Result<Vec<f64>, String> {
        let p = self.profile;
        let r = self.results(Kind::Coupling, p.x_sites, p.x_t, p.x_draws)?;
        Ok(r.iter().filter(|s| s.index.coupling == 0).flat_map(|s| s.bath_eigenvalues.iter().copied()).collect())
    }

    /// Coupling statistics with the fitted bath density and its eigenvalues.
    fn coupling(&mut self) -> Result<CouplingData, String> {
        if self.coupling.is_none() {
            let run = |s: &mut Self| -> Result<_, String> {
                let p = s.profile;
                let bath = s.bath_spectra()?;
                let model = fit_gaussian_density(&bath, C3_BINS).map_err(|e| e.to_string())?.model;
                let agg = aggregate(s.results(Kind::Coupling, p.x_sites, p.x_t, p.x_draws)?).map_err(|e| e.to_string())?;
                let sm = coupling_summary(&agg, &model).map_err(|e| e.to_string())?;
                Ok((sm, model, bath))
            };
            self.coupling = Some(run(self));
        }
        self.coupling.clone().expect("set above")
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, String> {
    Ok(Outcome { pass, detail })
}

fn max_dev(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Decoupled limit: spectrum is `{ε_μ + E_i}` and the overlaps a
/// permutation with phases.
fn c1(p: &Profile) -> Result<Outcome, String> {
    let spec = lattice(p.c1_sites);
    let params = ModelParams::normalized(&spec, 0.0, H1, SEED).map_err(|e| e.to_string())?;
    let h = sample_hamiltonian(&spec, &params, SampleIndex { bath: 0, coupling: 0 });
    let e = |r: Result<_, eigentherm_core::spectra::SpectraError>| r.map_err(|e| e.to_string());
    let full = e(diagonalize(&h.total_dense(), SourceTag::Full, MAX_DIM))?;
    let sys = e(diagonalize(&h.h_s.to_dense(), SourceTag::System, MAX_DIM))?;
    let bath = e(diagonalize(&h.h_b.to_dense(), SourceTag::Bath, MAX_DIM))?;
    let mut sums: Vec<f64> = sys.eigenvalues.iter().flat_map(|a| bath.eigenvalues.iter().map(move |b| a + b)).collect();
    sums.sort_by(f64::total_cmp);
    let scale = max_dev(sums.iter().copied());
    let err = max_dev(full.eigenvalues.iter().zip(&sums).map(|(a, b)| a - b)) / scale;
    let m = compute_overlaps(&full, &sys, &bath, None).map_err(|e| e.to_string())?;
    let perm = m.is_permutation_phase(C1_PERMUTATION_TOL);
    outcome(
        err <= C1_EIGEN_REL && perm,
        format!("L={} max eigenvalue error {err:.2e} of spectral radius (<= {C1_EIGEN_REL:e}), permutation-phase overlaps: {perm}", p.c1_sites),
    )
}

/// Completeness of the overlaps in both indices, one sample per size.
fn c2(p: &Profile) -> Result<Outcome, String> {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for &sites in &p.c2_sites {
        let spec = lattice(sites);
        let params = ModelParams::normalized(&spec, p.main_t, H1, SEED).map_err(|e| e.to_string())?;
        let h = sample_hamiltonian(&spec, &params, SampleIndex { bath: 0, coupling: 0 });
        let e = |r: Result<_, eigentherm_core::spectra::SpectraError>| r.map_err(|e| e.to_string());
        let full = e(diagonalize(&h.total_dense(), SourceTag::Full, MAX_DIM))?;
        let sys = e(diagonalize(&h.h_s.to_dense(), SourceTag::System, MAX_DIM))?;
        let bath = e(diagonalize(&h.h_b.to_dense(), SourceTag::Bath, MAX_DIM))?;
        drop(h);
        let m = compute_overlaps(&full, &sys, &bath, None).map_err(|e| e.to_string())?;
        let rows = max_dev(m.product_state_sums().into_iter().map(|s| s - 1.0));
        let cols = max_dev(m.state_sums().into_iter().map(|s| s - 1.0));
        worst = worst.max(rows).max(cols);
        parts.push(format!("L={sites}: {:.1e}/{:.1e}", rows, cols));
    }
    outcome(worst <= C2_COMPLETENESS, format!("max |sum - 1| over product states/eigenstates {} (<= {C2_COMPLETENESS:e})", parts.join(", ")))
}

/// Pooled bath spectrum against a centred normal of fitted width.
fn c3(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let bath = s.bath_spectra()?;
    let sd = (bath.iter().map(|v| v * v).sum::<f64>() / bath.len() as f64).sqrt();
    let test = chi_square_normal(&bath, 0.0, sd, C3_BINS, 1);
    outcome(
        test.p_value > C3_P_MIN,
        format!(
            "L={} {} draws, {} eigenvalues: Δ_B = {sd:.4}, kurtosis {:.3}, chi2 {:.1} on {} dof, p = {:.2e} (> {C3_P_MIN})",
            p.x_sites,
            p.x_draws,
            bath.len(),
            kurtosis(&bath),
            test.statistic,
            test.dof,
            test.p_value
        ),
    )
}

/// Coupling-shape factors, diagonal band width and factorisation.
fn c4(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let (sm, _, bath) = s.coupling()?;
    let sig = &sm.factorization.sigma_sq;
    let (sd, _) = histogram_width(&bath, C3_BINS).map_err(|e| e.to_string())?;
    let sd0 = (sd * sd + H1 * H1).sqrt();
    let half = sm.widths.delta_d / 2.0;
    let sig_ok = (sig[0][0] - 1.0 / 3.0).abs() <= C4_SIGMA_ABS && (sig[1][1] - 1.0 / 3.0).abs() <= C4_SIGMA_ABS && (sig[0][1] - 2.0 / 3.0).abs() <= C4_SIGMA_ABS;
    let width_ok = (half / sd0 - 1.0).abs() <= C4_DELTA_D_REL;
    let fact_ok = sm.factorization.residual < C4_FACTORIZATION;
    outcome(
        sig_ok && width_ok && fact_ok,
        format!(
            "L={} t={} {}x2 draws: σ² = {:.3}/{:.3}/{:.3} (±{C4_SIGMA_ABS} of 1/3,1/3,2/3), Δ_d/2 = {half:.4} vs {sd0:.4} ({:+.1}%, ±{}%), residual {:.3} (< {C4_FACTORIZATION}), Δ₀ = {:.4} ± {:.4}",
            p.x_sites,
            p.x_t,
            p.x_draws,
            sig[0][0],
            sig[1][1],
            sig[0][1],
            100.0 * (half / sd0 - 1.0),
            100.0 * C4_DELTA_D_REL,
            sm.factorization.residual,
            sm.widths.delta0,
            sm.widths.delta0_stderr
        ),
    )
}

/// Synthetic Lorentzian recovery, equal peak areas, and `1/A` against the
/// bath density.
fn c5(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let (a0, g0, c0) = (0.37, 0.013, -0.41);
    let x: Vec<f64> = (0..401).map(|k| c0 - 0.2 + 0.001 * k as f64 + 1.3e-4).collect();
    let y: Vec<f64> = x.iter().map(|&v| a0 * g0 / PI / ((v - c0).powi(2) + g0 * g0)).collect();
    let fit = fit_binned_peak(&x, &y, &vec![100; x.len()]).map_err(|e| e.to_string())?;
    let synth = max_dev([fit.area / a0 - 1.0, fit.gamma / g0 - 1.0, (fit.center - c0) / g0]);

    let agg = s.ensemble(p.main_sites, p.main_t, p.main_draws)?;
    let rows = fit_peaks(&agg);
    let mut worst_z: f64 = 0.0;
    for j in 0..p.targets.len() {
        let f: Vec<_> = rows.iter().filter(|r| r.target == j).map(|r| r.fit.clone().ok_or(format!("peak fit failed at target {j}: {:?}", r.error))).collect::<Result<_, _>>()?;
        let z = (f[0].area - f[1].area).abs() / f[0].stderr_area().hypot(f[1].stderr_area());
        worst_z = worst_z.max(z);
    }

    let (mut xs, mut ys, mut hs) = (Vec::new(), Vec::new(), Vec::new());
    let n_bath = (lattice(p.grid_sites).bath_dim()) as f64;
    for &t in &p.t_grid.clone() {
        let agg = s.ensemble(p.grid_sites, t, p.grid_draws)?;
        let rho = fit_gaussian_density(&agg.bath_eigenvalues, C3_BINS).map_err(|e| e.to_string())?.model;
        for r in fit_peaks(&agg) {
            let Some(f) = r.fit else { return Err(format!("peak fit failed at t={t}, target {}", r.target)) };
            xs.push(n_bath * agg.eps.iter().map(|e| rho.density(r.lambda - e)).sum::<f64>());
            hs.push(n_bath * agg.eps.iter().map(|e| histogram_density(&agg.bath_eigenvalues, r.lambda - e)).sum::<f64>());
            ys.push(1.0 / f.area);
        }
    }
    let reg = linear_fit(&xs, &ys, None);
    let hist = linear_fit(&hs, &ys, None);
    outcome(
        synth <= C5_SYNTH_REL && worst_z <= C5_AREA_SIGMAS && (reg.slope - 1.0).abs() <= C5_SLOPE_TOL,
        format!(
            "synthetic max rel error {synth:.1e} (<= {C5_SYNTH_REL:e}); L={} t={}: max |A₁-A₂| = {worst_z:.2} joint stderr (<= {C5_AREA_SIGMAS}); 1/A vs N_B Σ_ν ρ_B(λ-ε_ν) over {} peaks: slope {:.3} ± {:.3} (1 ± {C5_SLOPE_TOL}), intercept {:.1} [diagnostic, histogram density: slope {:.3}, intercept {:.1}]",
            p.main_sites,
            p.main_t,
            xs.len(),
            reg.slope,
            reg.stderr_slope,
            reg.intercept,
            hist.slope,
            hist.intercept
        ),
    )
}

/// Empirical density from the eigenvalues within `±0.05` of `x`.
fn histogram_density(values: &[f64], x: f64) -> f64 {
    const HALF: f64 = 0.05;
    values.iter().filter(|v| (*v - x).abs() < HALF).count() as f64 / (values.len() as f64 * 2.0 * HALF)
}

/// Rates and shifts proportional to `t`.
fn c6(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let mut fits = Vec::new();
    for &t in &p.t_grid.clone() {
        fits.push(fit_peaks(&s.ensemble(p.grid_sites, t, p.grid_draws)?));
    }
    let (mut min_g, mut min_e) = (f64::INFINITY, f64::INFINITY);
    let mut worst = String::new();
    for j in 0..p.targets.len() {
        for mu in 0..2 {
            let (mut g, mut e) = (Vec::new(), Vec::new());
            for rows in &fits {
                let r = rows.iter().find(|r| r.target == j && r.mu == mu).expect("one row per target and level");
                let f = r.fit.as_ref().ok_or(format!("peak fit failed: {:?}", r.error))?;
                g.push(f.gamma);
                e.push(f.eta);
            }
            let rg = proportional_fit(&p.t_grid, &g).r_squared;
            let re = proportional_fit(&p.t_grid, &e).r_squared;
            if re < min_e {
                worst = format!("λ={} μ={}", p.targets[j], mu + 1);
            }
            min_g = min_g.min(rg);
            min_e = min_e.min(re);
        }
    }
    outcome(
        min_g > C6_R2_MIN && min_e > C6_R2_MIN,
        format!("L={} t={:?}: min R² through origin γ {min_g:.4}, η {min_e:.4} at {worst} (> {C6_R2_MIN})", p.grid_sites, p.t_grid),
    )
}

/// Predicted against measured `γ₁+γ₂` and `η₁-η₂` in the bulk.
fn c7(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let (sm, model, _) = s.coupling()?;
    let agg = s.ensemble(p.main_sites, p.main_t, p.main_draws)?;
    let rows = fit_peaks(&agg);
    let tv = total_variance(model.variance, p.main_t, H1);
    let (mut ok, mut parts) = (true, Vec::new());
    for (j, &lambda) in p.targets.iter().enumerate() {
        if lambda.abs() > C7_BULK * tv.sqrt() {
            continue;
        }
        let f: Vec<_> = rows.iter().filter(|r| r.target == j).map(|r| r.fit.clone().ok_or("peak fit failed".to_string())).collect::<Result<_, _>>()?;
        let beta = beta_at(lambda, tv);
        let pr = predict(&agg.eps, &sm.factorization.sigma_sq, p.main_t, beta, lambda, sm.widths.delta0, sm.widths.delta0_stderr).map_err(|e| e.to_string())?;
        let rg = (f[0].gamma + f[1].gamma) / (pr.gamma[0] + pr.gamma[1]);
        let re = (f[0].eta - f[1].eta) / (pr.eta[0] - pr.eta[1]);
        ok &= (rg - 1.0).abs() <= C7_REL && (re - 1.0).abs() <= C7_REL;
        parts.push(format!("λ={lambda}: γ {rg:.3}, η {re:.3}"));
    }
    outcome(ok, format!("L={} t={} measured/predicted (1 ± {C7_REL}) {}", p.main_sites, p.main_t, parts.join("; ")))
}

struct SizeRow {
    sites: usize,
    agg: EnsembleAggregate,
    ratios: Vec<(f64, f64, f64)>,
    /// Ratio stderr with samples, not states, as independent units.
    clustered: Vec<f64>,
}

fn clustered_stderr(agg: &EnsembleAggregate, target: usize) -> f64 {
    let sums: Vec<(f64, f64)> = agg
        .states_by_sample(target)
        .iter()
        .map(|g| g.iter().fold((0.0, 0.0), |(a, b), r| (a + r.population(0), b + r.population(1))))
        .collect();
    let m = sums.len() as f64;
    let (a, b) = sums.iter().fold((0.0, 0.0), |(x, y), s| (x + s.0, y + s.1));
    let r = a / b;
    (m / (m - 1.0) * sums.iter().map(|s| (s.0 - r * s.1).powi(2)).sum::<f64>()).sqrt() / b
}

fn size_rows(s: &mut Samples) -> Result<Vec<SizeRow>, String> {
    let p = s.profile;
    let mut out = Vec::new();
    for &(sites, draws) in &p.sizes.clone() {
        let agg = s.ensemble(sites, p.main_t, draws)?;
        let rows = fit_peaks(&agg);
        let mut etas = Vec::new();
        for j in 0..p.targets.len() {
            let e: Vec<f64> = rows.iter().filter(|r| r.target == j).map(|r| r.fit.as_ref().map(|f| f.eta).ok_or(format!("L={sites}: peak fit failed at target {j}"))).collect::<Result<_, _>>()?;
            etas.push(e);
        }
        let distinct: Vec<f64> = agg.bath_eigenvalues.chunks(lattice(sites).bath_dim()).step_by(2).flatten().copied().collect();
        let var_b = fit_gaussian_density(&distinct, C3_BINS).map_err(|e| e.to_string())?.model.variance;
        let rr = canonical_ratios(&agg, &etas, total_variance(var_b, p.main_t, H1)).map_err(|e| e.to_string())?;
        let ratios = rr.iter().map(|r| (r.pairs[0].ratio, r.pairs[0].stderr, r.pairs[0].relative_deviation)).collect();
        let clustered = (0..p.targets.len()).map(|j| clustered_stderr(&agg, j)).collect();
        out.push(SizeRow { sites, agg, ratios, clustered });
    }
    Ok(out)
}

/// Population ratios against shifted Boltzmann weights, and their size
/// independence.
fn c8(p: &Profile, rows: &[SizeRow]) -> Result<Outcome, String> {
    let worst_dev = rows.iter().flat_map(|r| r.ratios.iter().map(|x| x.2.abs())).fold(0.0, f64::max);
    let (mut worst_z, mut worst_cz): (f64, f64) = (0.0, 0.0);
    for j in 0..p.targets.len() {
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                let (x, y) = (rows[a].ratios[j], rows[b].ratios[j]);
                worst_z = worst_z.max((x.0 - y.0).abs() / x.1.hypot(y.1));
                worst_cz = worst_cz.max((x.0 - y.0).abs() / rows[a].clustered[j].hypot(rows[b].clustered[j]));
            }
        }
    }
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("L={}: {}", r.sites, r.ratios.iter().map(|x| format!("{:+.1}%", 100.0 * x.2)).collect::<Vec<_>>().join(" ")))
        .collect();
    outcome(
        worst_dev <= C8_REL && worst_z <= C8_SIGMAS,
        format!(
            "t={} λ={:?} deviation from Boltzmann {} (<= {}%); max pairwise size difference {worst_z:.2} joint stderr (<= {C8_SIGMAS}) [diagnostic, sample-clustered stderr: {worst_cz:.2}]",
            p.main_t,
            p.targets,
            table.join(", "),
            100.0 * C8_REL
        ),
    )
}

/// Off-diagonal element and fluctuation scaling with `N`.
fn c9(rows: &[SizeRow]) -> Result<Outcome, String> {
    let input: Vec<(usize, &EnsembleAggregate)> = rows.iter().map(|r| (1usize << r.sites, &r.agg)).collect();
    let sc = size_scaling(&input).map_err(|e| e.to_string())?;
    let inside = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
    outcome(
        inside(sc.kappa.slope, C9_KAPPA) && inside(sc.var_rho11_slope.slope, C9_VARIANCE) && inside(sc.var_rho12_slope.slope, C9_VARIANCE),
        format!(
            "N = {:?}: ln mean|ρ₁₂| slope {:.3} (in {C9_KAPPA:?}); variance slopes ρ₁₁ {:.3}, ρ₁₂ {:.3} (in {C9_VARIANCE:?})",
            sc.dims, sc.kappa.slope, sc.var_rho11_slope.slope, sc.var_rho12_slope.slope
        ),
    )
}

/// Overlap phases uniform on the circle.
fn c10(s: &mut Samples) -> Result<Outcome, String> {
    let p = s.profile;
    let agg = s.ensemble(p.main_sites, p.main_t, p.main_draws)?;
    let pairs: u64 = agg.targets.iter().map(|t| t.n_states as u64).sum();
    let test = chi_square_uniform(&agg.phase_counts);
    outcome(
        pairs >= C10_MIN_PAIRS && test.p_value > C10_P_MIN,
        format!(
            "L={} {} (state, sample) pairs (>= {C10_MIN_PAIRS}), {:.3e} phases in {} bins: chi2 {:.1} on {} dof, p = {:.3} (> {C10_P_MIN})",
            p.main_sites,
            pairs,
            agg.phase_counts.iter().sum::<f64>(),
            agg.phase_counts.len(),
            test.statistic,
            test.dof,
            test.p_value
        ),
    )
}

/// Special functions and kernels against quadrature.
fn c11() -> Result<Outcome, String> {
    let gl = GaussLegendre::new(20);
    let erfi = max_dev((0..=80).map(|k| {
        let v = -4.0 + 0.1 * k as f64;
        -gl.principal_value(0.0, 16.0, 160, |u| (-(u + v) * (u + v)).exp()) / PI - erfi_scaled(v)
    }));

    let inp = PredictionInput::new(2e-3, 0.8, 0.7, vec![-0.12, 0.12], two_level_sigma());
    let kk = max_dev((0..=20).flat_map(|k| {
        let x = -1.5 + 0.15 * k as f64;
        let (inp, gl) = (&inp, &gl);
        (0..2).map(move |mu| {
            let re = gl.principal_value(x, 12.0, 240, |u| wieltjes(u, mu, inp).im) / PI;
            let g = wieltjes(x, mu, inp);
            (re - g.re) / g.norm().max(1.0)
        })
    }));

    // Large-bath form of the normalisation: only τ² carries the density.
    let nb = 4096;
    let dens = DensityModel::centred(1.0);
    let mut tau: f64 = 0.0;
    for &(d0, beta) in &[(0.6, 0.0), (0.6, 2.0 / 0.6), (1.0, -2.0), (2.0, 1.0), (0.9, 0.8)] {
        for &ej in &[-0.8, 0.0, 0.5] {
            let s = nb as f64
                * gl.integrate(ej - 12.0 * d0, ej + 12.0 * d0, 80, |e| {
                    (dens.density(e) * dens.density(ej)).sqrt() * (beta * (e - ej) / 2.0).exp() * tau_model(e, ej, &dens, d0, beta, nb)
                });
            tau = tau.max((s - 1.0).abs());
        }
    }

    let mut reduction: f64 = 0.0;
    for &(d0, beta) in &[(0.8f64, 0.9), (1.2, 0.0), (0.6, -0.5)] {
        let lp = LargeSubsystemParams { delta_q: 1e-4 * d0 / 2.0, delta_s: d0 / 2.0, delta_r: d0 / 2.0, t: 1e-3, beta };
        let (g, e) = large_subsystem_gamma_eta(0.0, &lp).map_err(|e| e.to_string())?;
        let one = PredictionInput::new(1e-3, beta, d0, vec![0.0], vec![vec![1.0]]);
        let g1 = predict_gamma(&one).map_err(|e| e.to_string())?[0];
        let e1 = predict_eta(&one).map_err(|e| e.to_string())?[0];
        reduction = reduction.max((g / g1 - 1.0).abs());
        if e1 != 0.0 {
            reduction = reduction.max((e / e1 - 1.0).abs());
        }
    }

    let r1 = nesting_residual(0.1, 1.0, &[-0.1, 0.1]).map_err(|e| e.to_string())?;
    let r2 = nesting_residual(0.01, 1.0, &[-0.1, 0.1]).map_err(|e| e.to_string())?;
    let ratio = r1 / r2;
    let nest_ok = r2 < C11_NESTING && ratio >= C11_NESTING_RATIO.0 && ratio <= C11_NESTING_RATIO.1;
    outcome(
        erfi <= C11_ERFI && kk <= C11_KRAMERS_KRONIG && tau <= C11_TAU_NORM && reduction <= C11_REDUCTION && nest_ok,
        format!(
            "erfi vs PV {erfi:.1e} (<= {C11_ERFI:e}); Kramers-Kronig {kk:.1e} (<= {C11_KRAMERS_KRONIG:e}); τ² normalisation {tau:.1e} (<= {C11_TAU_NORM:e}); q→0 reduction {reduction:.1e} (<= {C11_REDUCTION:e}); nesting {r2:.2e} at α=0.01 (< {C11_NESTING}), ratio α=0.1/0.01 {ratio:.2} (in {C11_NESTING_RATIO:?})"
        ),
    )
}

/// One more self-consistent iteration barely moves the peak function.
fn c12() -> Result<Outcome, String> {
    let delta0 = 1.0;
    let t = C12_T_OVER_DELTA0 * delta0;
    let inp = PredictionInput::new(t, 0.8, delta0, vec![-0.1, 0.1], two_level_sigma());
    let first = chi_from_wieltjes(&inp, None).map_err(|e| e.to_string())?;
    let second = casati_girko_step(&first, &Kernel::Gaussian { delta0 }, &inp.sigma_sq, t).map_err(|e| e.to_string())?;
    let change = second.weighted_l1_change(&first);
    let g = predict_gamma(&inp).map_err(|e| e.to_string())?;
    let mut width: f64 = 0.0;
    for mu in 0..2 {
        let (w, _) = second.fitted_half_width(mu, 10.0 * g[mu]).map_err(|e| e.to_string())?;
        width = width.max((w / g[mu] - 1.0).abs());
    }
    outcome(
        change < C12_CHANGE && width <= C12_WIDTH_REL,
        format!("t/Δ₀ = {C12_T_OVER_DELTA0:e}, β = 0.8: weighted L1 change {change:.2e} (< {C12_CHANGE:e}); fitted half-width vs predicted rate {:.2}% (<= {}%)", 100.0 * width, 100.0 * C12_WIDTH_REL),
    )
}

fn main() {
    let full = std::env::var("EIGENTHERM_ACCEPTANCE").is_ok_and(|v| v == "full");
    let profile = if full { Profile::full() } else { Profile::desk() };
    // Expectations are calibrated for the desk profile only.
    let expected_fail: &[&str] = if full { &[] } else { EXPECTED_FAIL };
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let wanted = |id: &str| selected.is_empty() || selected.iter().any(|s| s == id);
    println!("acceptance profile: {}", profile.name);

    let mut samples = Samples { profile: &profile, store: BTreeMap::new(), coupling: None };
    let mut sizes: Option<Result<Vec<SizeRow>, String>> = None;
    let mut unexpected = Vec::new();
    for id in ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11", "C12"] {
        if !wanted(id) {
            continue;
        }
        let started = Instant::now();
        let result = match id {
            "C1" => c1(&profile),
            "C2" => c2(&profile),
            "C3" => c3(&mut samples),
            "C4" => c4(&mut samples),
            "C5" => c5(&mut samples),
            "C6" => c6(&mut samples),
            "C7" => c7(&mut samples),
            "C8" | "C9" => {
                let rows = sizes.get_or_insert_with(|| size_rows(&mut samples));
                match rows {
                    Ok(rows) if id == "C8" => c8(&profile, rows),
                    Ok(rows) => c9(rows),
                    Err(e) => Err(e.clone()),
                }
            }
            "C10" => c10(&mut samples),
            "C11" => c11(),
            _ => c12(),
        };
        let o = result.unwrap_or_else(|e| Outcome { pass: false, detail: format!("error: {e}") });
        let expect_fail = expected_fail.contains(&id);
        let status = match (o.pass, expect_fail) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (true, true) => "XPASS",
            (false, false) => "FAIL",
        };
        if o.pass == expect_fail {
            unexpected.push(format!("{id} {status}"));
        }
        println!("{id} {status}: {} [{:.0} s]", o.detail, started.elapsed().as_secs_f64());
    }
    if unexpected.is_empty() {
        println!("acceptance: all outcomes as expected");
    } else {
        println!("acceptance: unexpected outcomes: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
