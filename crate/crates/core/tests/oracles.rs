//! Frozen-value and independent-route checks of the numerical building
//! blocks. Each test computes the quantity a second way (explicit traces,
//! quadrature, sampling) instead of calling the closed form twice.

use std::f64::consts::PI;

use eigentherm_core::model::{build_lattice, matrix_variance, sample_hamiltonian, Geometry, ModelParams, PauliString, PauliSum};
use eigentherm_core::quad::GaussLegendre;
use eigentherm_core::rmt::{
    chi_from_wieltjes, erfi_scaled, large_subsystem_gamma_eta, nesting_residual, predict_gamma, predict_eta,
    predict_eta_series, tau_from_region, tau_model, two_level_sigma, wieltjes, LargeSubsystemParams, PredictionInput,
};
use eigentherm_core::spectra::{fit_gaussian_density, DensityModel};
use eigentherm_core::stats;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

/// `Tr(A²)/dim` from the action of each string on basis states, merging
/// coincident images, without using trace orthogonality of Pauli strings.
fn explicit_variance(op: &PauliSum) -> f64 {
    let dim = op.dim();
    let mut total = 0.0;
    let mut col = Vec::with_capacity(op.terms.len());
    for b in 0..dim {
        col.clear();
        for (c, p) in &op.terms {
            let (b2, ph) = p.apply(b);
            col.push((b2, ph * *c));
        }
        col.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < col.len() {
            let mut acc = col[k].1;
            let mut j = k + 1;
            while j < col.len() && col[j].0 == col[k].0 {
                acc += col[j].1;
                j += 1;
            }
            total += acc.norm_sqr();
            k = j;
        }
    }
    total / dim as f64
}

#[test]
fn bath_variance_averages_to_one_over_samples() {
    let spec = build_lattice(13, 1, &Geometry::Ladder).unwrap();
    let p = ModelParams::normalized(&spec, 2.5e-3, 0.1, 11).unwrap();
    let v: Vec<f64> = (0..200).map(|k| explicit_variance(&sample_hamiltonian(&spec, &p, k).h_b)).collect();
    let m = stats::mean(&v);
    let se = stats::std_error(&v);
    assert!((m - 1.0).abs() < 3.0 * se, "mean {m}, stderr {se}");
    assert!(se > 0.0);
}

#[test]
fn single_pauli_pair_has_variance_c_squared() {
    let mut op = PauliSum::new(4);
    op.push(0.37, PauliString::pair(4, 1, 1, 3, 2));
    let dense = op.to_dense();
    assert!((matrix_variance(&dense) - 0.37f64.powi(2)).abs() < 1e-15);
    assert!((explicit_variance(&op) - 0.37f64.powi(2)).abs() < 1e-15);
}

#[test]
fn fitted_variance_tracks_sample_variance() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let d = Normal::new(0.0, 2.0).unwrap();
    let mut last = f64::INFINITY;
    for &n in &[1_000usize, 10_000, 200_000] {
        let v: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let f = fit_gaussian_density(&v, 50).unwrap();
        let m = v.iter().sum::<f64>() / n as f64;
        let direct = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert!((f.model.variance - direct).abs() < 1e-12 * direct);
        let err = (f.model.variance - 4.0).abs();
        assert!(err < 5.0 * 4.0 * (2.0 / n as f64).sqrt());
        if n == 200_000 {
            assert!(err < last.max(0.05));
        }
        last = err;
    }
}

#[test]
fn inverse_temperature_of_a_bulk_state() {
    let dtot2 = 1.044f64.powi(2) + 6.25e-4 + 0.01;
    let beta = DensityModel::centred(dtot2).beta_at(-0.95789);
    assert!((beta - 0.871).abs() < 1e-3, "{beta}");
}

#[test]
fn partition_function_matches_quadrature() {
    let d = DensityModel::centred(1.0);
    let n = 1usize << 16;
    let gl = GaussLegendre::new(20);
    let q = n as f64 * gl.integrate(-15.0, 15.0, 60, |l| d.density(l) * (-l).exp());
    let closed = d.partition_function(1.0, n);
    assert!((closed / (n as f64 * 0.5f64.exp()) - 1.0).abs() < 1e-14);
    assert!((q / closed - 1.0).abs() < 1e-12);
}

#[test]
fn erfi_scaled_matches_principal_value_quadrature() {
    let gl = GaussLegendre::new(20);
    for k in 0..=80 {
        let v = -4.0 + 0.1 * k as f64;
        // ⨍ du e^{-(u+v)²}/u, pole at u = 0.
        let pv = gl.principal_value(0.0, 16.0, 160, |u| (-(u + v) * (u + v)).exp());
        let got = -pv / PI;
        assert!((got - erfi_scaled(v)).abs() < 1e-8, "v = {v}: {got} vs {}", erfi_scaled(v));
    }
}

#[test]
fn wieltjes_real_part_follows_from_imaginary_part() {
    let inp = PredictionInput::new(2e-3, 0.8, 0.7, vec![-0.12, 0.12], two_level_sigma());
    let gl = GaussLegendre::new(20);
    for k in 0..=20 {
        let x = -1.5 + 0.15 * k as f64;
        let re = gl.principal_value(x, 12.0, 240, |u| wieltjes(u, 0, &inp).im) / PI;
        let g = wieltjes(x, 0, &inp);
        assert!((re - g.re).abs() < 1e-6 * g.norm().max(1.0), "x = {x}: {re} vs {}", g.re);
    }
}

#[test]
fn tau_model_is_normalised() {
    // Large-bath limit: near E_j the density is ρ(E_j) e^{β(E - E_j)}, so
    // N_B ∫ ρ τ² becomes N_B ∫ √(ρ_i ρ_j) e^{βω/2} τ² with the model density
    // entering only through τ².
    let gl = GaussLegendre::new(20);
    let nb = 4096;
    let dens = DensityModel::centred(1.0);
    for &(delta0, beta) in &[(0.6, 0.0), (0.6, 2.0 / 0.6), (1.0, -2.0), (2.0, 1.0), (0.9, 0.8)] {
        for &ej in &[-0.8, 0.0, 0.5] {
            let s = nb as f64
                * gl.integrate(ej - 12.0 * delta0, ej + 12.0 * delta0, 80, |e| {
                    (dens.density(e) * dens.density(ej)).sqrt()
                        * (beta * (e - ej) / 2.0).exp()
                        * tau_model(e, ej, &dens, delta0, beta, nb)
                });
            assert!((s - 1.0).abs() < 1e-6, "Δ₀ = {delta0}, β = {beta}, E_j = {ej}: {s}");
        }
    }
}

#[test]
fn tau_model_normalisation_approaches_one_for_wide_baths() {
    // With a genuine Gaussian density of variance V whose slope at E_j is β,
    // the deficit shrinks like 1/V.
    let gl = GaussLegendre::new(20);
    let (delta0, beta, ej) = (0.6, 0.8, 0.0);
    let mut last = f64::INFINITY;
    for &var in &[10.0, 100.0, 1000.0] {
        let dens = DensityModel { mean: ej + beta * var, variance: var };
        let s = gl.integrate(ej - 12.0 * delta0, ej + 12.0 * delta0, 80, |e| dens.density(e) * tau_model(e, ej, &dens, delta0, beta, 1) );
        let dev = (s - 1.0).abs();
        assert!(dev < delta0 * delta0 / var, "V = {var}: {s}");
        assert!(dev < last / 5.0);
        last = dev;
    }
}

#[test]
fn region_kernel_width_is_a_convolution() {
    // ∫ dε ρ_R(ε) ρ_R(ε + ω) for Gaussian ρ_R has width 2Δ_R.
    let gl = GaussLegendre::new(20);
    let dr: f64 = 0.45;
    let rho = |e: f64| (-e * e / (2.0 * dr * dr)).exp() / (2.0 * PI * dr * dr).sqrt();
    let at0 = gl.integrate(-12.0 * dr, 12.0 * dr, 60, |e| rho(e) * rho(e));
    for &w in &[0.0, 0.3, 0.9, 1.7] {
        let conv = gl.integrate(-12.0 * dr, 12.0 * dr, 60, |e| rho(e) * rho(e + w));
        let ratio = tau_from_region(dr, 0.0, 0.0, w) / tau_from_region(dr, 0.0, 0.0, 0.0);
        // ρ_R ⋆ ρ_R has variance 2Δ_R²; the kernel carries e^{-ω²/(4Δ_R²)}.
        assert!((conv / at0 - ratio).abs() < 1e-8, "ω = {w}");
    }
}

#[test]
fn eta_series_tracks_closed_form() {
    // One level, σ² = 1: ε̃ = -βΔ₀/4 sweeps [-0.5, 0.5] as β runs over [-2, 2].
    let t = 1e-3;
    for k in 0..=40 {
        let beta = -2.0 + 0.1 * k as f64;
        let inp = PredictionInput::new(t, beta, 1.0, vec![0.0], vec![vec![1.0]]);
        let a = predict_eta(&inp).unwrap()[0];
        let b = predict_eta_series(&inp).unwrap()[0];
        let unit = 2.0 * t / 1.0;
        assert!((a - b).abs() / unit < 1e-3, "β = {beta}: {a} vs {b}");
    }
}

#[test]
fn small_coupling_peak_width_is_predicted_rate() {
    for &t in &[1e-3, 2e-3, 5e-3] {
        for &beta in &[0.0, 0.8] {
            let inp = PredictionInput::new(t, beta, 1.0, vec![-0.1, 0.1], two_level_sigma());
            let chi = chi_from_wieltjes(&inp, None).unwrap();
            let g = predict_gamma(&inp).unwrap();
            for mu in 0..2 {
                let (w, _) = chi.fitted_half_width(mu, 10.0 * g[mu]).unwrap();
                assert!((w / g[mu] - 1.0).abs() < 0.01, "t = {t}, μ = {mu}: {w} vs {}", g[mu]);
            }
        }
    }
}

#[test]
fn peak_width_carries_slope_renormalisation() {
    // At t/Δ₀ = 1e-2 the width is γ / (1 + t ∂ₓ Re G̃) at the peak, about 2%
    // above the bare rate.
    let t = 1e-2;
    let inp = PredictionInput::new(t, 0.0, 1.0, vec![-0.1, 0.1], two_level_sigma());
    let chi = chi_from_wieltjes(&inp, None).unwrap();
    let g = predict_gamma(&inp).unwrap();
    let h = 1e-5;
    for mu in 0..2 {
        let (w, c) = chi.fitted_half_width(mu, 3.0 * g[mu]).unwrap();
        let slope = (wieltjes(c + h, mu, &inp).re - wieltjes(c - h, mu, &inp).re) / (2.0 * h);
        let renorm = g[mu] / (1.0 + t * slope);
        assert!((w / g[mu] - 1.0).abs() > 0.01);
        assert!((w / renorm - 1.0).abs() < 2e-3, "μ = {mu}: {w} vs {renorm}");
    }
}

#[test]
fn peak_is_cauchy_near_centre() {
    let inp = PredictionInput::new(2e-3, 0.8, 1.0, vec![-0.1, 0.1], two_level_sigma());
    let chi = chi_from_wieltjes(&inp, None).unwrap();
    let g = predict_gamma(&inp).unwrap();
    for mu in 0..2 {
        let (w, c) = chi.fitted_half_width(mu, 5.0 * g[mu]).unwrap();
        let (lo, _) = chi.sum_rules(mu);
        let mut worst: f64 = 0.0;
        let mut far: f64 = 0.0;
        for k in 0..chi.grid.n {
            let x = chi.grid.x(k);
            let y = chi.values[mu][k] * (-chi.beta * x / 2.0).exp();
            let cauchy = lo * w / (PI * ((x - c).powi(2) + w * w));
            let dev = (y / cauchy - 1.0).abs();
            if (x - c).abs() <= 5.0 * g[mu] {
                worst = worst.max(dev);
            } else if (x - c).abs() > 2.0 * inp.delta1() {
                far = far.max(dev);
            }
        }
        assert!(worst < 0.05, "μ = {mu}: {worst}");
        assert!(far > 0.5, "cutoff should show beyond Δ₁: {far}");
    }
}

#[test]
fn large_subsystem_width_is_a_convolution() {
    let p = LargeSubsystemParams { delta_q: 0.3, delta_s: 0.6, delta_r: 0.4, t: 1e-3, beta: 0.0 };
    let q = p.q();
    // Widths of the two Gaussians entering the combined kernel.
    let s1 = p.delta0_prime() / 2f64.sqrt();
    let s2 = p.delta0() / 2f64.sqrt();
    let gl = GaussLegendre::new(20);
    let g = |x: f64, s: f64| (-x * x / (2.0 * s * s)).exp() / (2.0 * PI * s * s).sqrt();
    let var = gl.integrate(-10.0, 10.0, 100, |w| {
        w * w * gl.integrate(-10.0, 10.0, 40, |u| g(u, s1) * g(w - u, s2))
    });
    assert!((2.0 * var - p.delta2().powi(2)).abs() < 1e-8, "{} vs {}", 2.0 * var, p.delta2().powi(2));
    let expected = 4.0 * p.delta_q.powi(2) * (1.0 - q / 2.0) + 4.0 * p.delta_r.powi(2);
    assert!((p.delta2().powi(2) - expected).abs() < 1e-14);
}

#[test]
fn large_subsystem_reduces_to_single_level_form() {
    let d0: f64 = 0.8;
    let p = LargeSubsystemParams { delta_q: 1e-4 * d0 / 2.0, delta_s: d0 / 2.0, delta_r: d0 / 2.0, t: 1e-3, beta: 0.9 };
    let (g, e) = large_subsystem_gamma_eta(0.0, &p).unwrap();
    // One level ν with σ² = 1 and ε_μν = 0.
    let inp = PredictionInput::new(1e-3, 0.9, d0, vec![0.0], vec![vec![1.0]]);
    let g1 = predict_gamma(&inp).unwrap()[0];
    let e1 = predict_eta(&inp).unwrap()[0];
    assert!((g / g1 - 1.0).abs() < 1e-6, "{g} vs {g1}");
    assert!((e / e1 - 1.0).abs() < 1e-6, "{e} vs {e1}");
}

#[test]
fn nesting_residual_decays_linearly() {
    let r1 = nesting_residual(0.1, 1.0, &[-0.1, 0.1]).unwrap();
    let r2 = nesting_residual(0.01, 1.0, &[-0.1, 0.1]).unwrap();
    let ratio = r1 / r2;
    assert!((8.0..12.5).contains(&ratio), "{r1} / {r2} = {ratio}");
    assert!(r2 < 1e-2);
    let r0 = nesting_residual(0.01, 0.0, &[-0.1, 0.1]).unwrap();
    assert!(r0 < 0.01 * 0.1 * 0.1 * 2.0, "{r0}");
}
