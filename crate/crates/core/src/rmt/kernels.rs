//! Band kernels of the coupling, large-subsystem rates, and the
//! microcanonical nesting check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{erfi_scaled, RmtError};
use crate::quad::GaussLegendre;
use crate::spectra::DensityModel;

/// Normalised scattering kernel `e^{-b₀²}/(√π Δ₀) e^{-ω²/Δ₀²}` with
/// `b₀ = βΔ₀/4`, so that `∫ e^{βω/2} f(ω) dω = 1`.
pub fn tau_kernel(delta0: f64, beta: f64, omega: f64) -> f64 {
    let b0 = beta * delta0 / 4.0;
    (-b0 * b0 - omega * omega / (delta0 * delta0)).exp() / (PI.sqrt() * delta0)
}

/// Band profile `τ²_ij = f(E_i - E_j) / (N_B √(ρ_B(E_i) ρ_B(E_j)))`.
pub fn tau_model(e_i: f64, e_j: f64, density: &DensityModel, delta0: f64, beta: f64, n_bath: usize) -> f64 {
    tau_kernel(delta0, beta, e_i - e_j) / (n_bath as f64 * (density.density(e_i) * density.density(e_j)).sqrt())
}

/// Kernel built from a bath region of width `Δ_R` with internal coupling
/// variance `t_R`: the convolution width becomes `Δ_R² + t_R/2`, giving
/// `e^{-4b_R²}/(√π 2Δ) e^{-ω²/(4Δ²)}` with `Δ² = Δ_R² + t_R/2`, `b_R = βΔ/4`.
pub fn tau_from_region(delta_r: f64, t_r: f64, beta: f64, omega: f64) -> f64 {
    let d = (delta_r * delta_r + t_r / 2.0).sqrt();
    tau_kernel(2.0 * d, beta, omega)
}

/// Widths for a system whose coupled region `Q` is a sizeable part of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeSubsystemParams {
    /// Energy width of the coupled system region.
    pub delta_q: f64,
    /// Energy width of the whole system.
    pub delta_s: f64,
    /// Energy width of the coupled bath region.
    pub delta_r: f64,
    pub t: f64,
    pub beta: f64,
}

impl LargeSubsystemParams {
    pub fn q(&self) -> f64 {
        (self.delta_q / self.delta_s).powi(2)
    }
    /// `Δ₀' = 2Δ_Q √(1 - q/2)`.
    pub fn delta0_prime(&self) -> f64 {
        2.0 * self.delta_q * (1.0 - self.q() / 2.0).sqrt()
    }
    pub fn delta0(&self) -> f64 {
        2.0 * self.delta_r
    }
    /// `Δ₂ = √(Δ₀'² + Δ₀²)`.
    pub fn delta2(&self) -> f64 {
        self.delta0_prime().hypot(self.delta0())
    }
}

/// `(γ(ε), η(ε))` for a large system: `ε̃ = (εq - b₀Δ₀)/Δ₂`,
/// `γ = t(√π/Δ₂) e^{-ε̃²}`, `η = -t(√π/Δ₂) e^{-ε̃²} erfi(ε̃)`.
pub fn large_subsystem_gamma_eta(eps: f64, p: &LargeSubsystemParams) -> Result<(f64, f64), RmtError> {
    let q = p.q();
    if !(q > 0.0 && q <= 1.0) || !(p.delta_r > 0.0) || !(p.t >= 0.0) || !p.beta.is_finite() {
        return Err(RmtError::BadInput(format!("need 0 < q <= 1, delta_r > 0, t >= 0 (q = {q})")));
    }
    let d0 = p.delta0();
    let d2 = p.delta2();
    let b0 = p.beta * d0 / 4.0;
    let e = (eps * q - b0 * d0) / d2;
    let pref = p.t * PI.sqrt() / d2;
    Ok((pref * (-e * e).exp(), -pref * erfi_scaled(e)))
}

fn system_partition(levels: &[f64], beta: f64) -> f64 {
    levels.iter().map(|e| (-beta * e).exp()).sum()
}

/// Largest relative deviation over levels between
/// `(1/√2π) ∫ dx e^{-x²/2} e^{(√α x - β)ε_μ} / Z^S(β - √α x)` and the
/// canonical weight `e^{-βε_μ}/Z^S(β)`.
pub fn nesting_residual(alpha: f64, beta: f64, levels: &[f64]) -> Result<f64, RmtError> {
    if !(alpha >= 0.0) || !beta.is_finite() || levels.is_empty() {
        return Err(RmtError::BadInput(format!("nesting check needs alpha >= 0 and levels (alpha = {alpha})")));
    }
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let gl = GaussLegendre::new(20);
    let sa = alpha.sqrt();
    let z = system_partition(levels, beta);
    let mut worst: f64 = 0.0;
    for &e in levels {
        let lhs = gl.integrate(-14.0, 14.0, 56, |x| {
            let bn = beta - sa * x;
            (-x * x / 2.0 - bn * e).exp() / system_partition(levels, bn)
        }) / (2.0 * PI).sqrt();
        let rhs = (-beta * e).exp() / z;
        worst = worst.max((lhs / rhs - 1.0).abs());
    }
    Ok(worst)
}

/// Common shift `η` fixed by normalisation of the reduced state:
/// `e^{-βη} = Z₀^S / Z^S` with `Z^S = Σ_μ e^{-β(ε_μ - η_μ)}`. Tends to the
/// mean of `η_μ` as `β → 0`.
pub fn global_shift(levels: &[f64], eta: &[f64], beta: f64) -> f64 {
    if beta.abs() < 1e-10 {
        return eta.iter().sum::<f64>() / eta.len() as f64;
    }
    let z0 = system_partition(levels, beta);
    let z: f64 = levels.iter().zip(eta).map(|(e, h)| (-beta * (e - h)).exp()).sum();
    (z / z0).ln() / beta
}
