//! Statistics of the coupling `X` in the unperturbed product eigenbasis:
//! boxed variance maps, band profiles, factorisation into a system and a
//! bath part, and element distributions.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{fit_gaussian, FitError};
use crate::model::{PauliString, PauliSum};
use crate::overlaps::{magnitude_distribution, MagnitudeFit, OverlapError};
use crate::spectra::{DensityModel, SpectrumBundle};
use crate::stats::{chi_square_normal, linear_fit, ChiSquareTest, LinearFit};

#[derive(Debug, Error)]
pub enum XStatsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
}

/// `X` in the product eigenbasis, stored as `N_S × N_S` blocks of
/// `N_B × N_B` matrices; block `(μ, ν)` holds `X_{μi,νj}`.
#[derive(Clone, Debug)]
pub struct RotatedCoupling {
    pub blocks: Vec<Mat<c64>>,
    pub eps: Vec<f64>,
    pub bath_energies: Vec<f64>,
}

impl RotatedCoupling {
    pub fn n_system(&self) -> usize {
        self.eps.len()
    }

    pub fn n_bath(&self) -> usize {
        self.bath_energies.len()
    }

    pub fn block(&self, mu: usize, nu: usize) -> &Mat<c64> {
        &self.blocks[mu * self.n_system() + nu]
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let (ns, nb) = (self.n_system(), self.n_bath());
        Mat::from_fn(ns * nb, ns * nb, |r, c| self.block(r / nb, c / nb)[(r % nb, c % nb)])
    }

    /// `Tr(X²)/N`.
    pub fn variance(&self) -> f64 {
        let s: f64 = self.blocks.iter().map(|b| b.norm_l2().powi(2)).sum();
        s / (self.n_system() * self.n_bath()) as f64
    }

    /// Largest `|X_{μi,νj} - conj(X_{νj,μi})|`.
    pub fn hermiticity_error(&self) -> f64 {
        let (ns, nb) = (self.n_system(), self.n_bath());
        let mut worst: f64 = 0.0;
        for mu in 0..ns {
            for nu in 0..ns {
                let (a, b) = (self.block(mu, nu), self.block(nu, mu));
                for i in 0..nb {
                    for j in 0..nb {
                        worst = worst.max((a[(i, j)] - b[(j, i)].conj()).norm());
                    }
                }
            }
        }
        worst
    }

    /// `Σ_μi |X_{μi,νj}|²` for every column `νj`, in basis order.
    pub fn column_norms(&self) -> Vec<f64> {
        let (ns, nb) = (self.n_system(), self.n_bath());
        let mut out = vec![0.0; ns * nb];
        for nu in 0..ns {
            for mu in 0..ns {
                let b = self.block(mu, nu);
                for j in 0..nb {
                    for i in 0..nb {
                        out[nu * nb + j] += b[(i, j)].norm_sqr();
                    }
                }
            }
        }
        out
    }
}

fn check_dims(n: usize, system: &SpectrumBundle, bath: &SpectrumBundle) -> Result<(), XStatsError> {
    if n != system.dim() * bath.dim() {
        return Err(XStatsError::Dimension(format!("operator {n} vs {} x {}", system.dim(), bath.dim())));
    }
    Ok(())
}

/// Rotate a Pauli-sum coupling term by term. Terms are grouped by their bath
/// factor `P_B`, so the cost is one `N_B³` product per distinct `P_B`.
pub fn rotate_to_unperturbed_basis(
    x: &PauliSum,
    system: &SpectrumBundle,
    bath: &SpectrumBundle,
) -> Result<RotatedCoupling, XStatsError> {
    check_dims(x.dim(), system, bath)?;
    let (ns, nb) = (system.dim(), bath.dim());
    let n_bath_qubits = nb.trailing_zeros() as usize;
    let mut groups: std::collections::BTreeMap<PauliString, Vec<(f64, PauliString)>> = Default::default();
    for &(c, p) in &x.terms {
        let (hi, lo) = p.split(n_bath_qubits);
        groups.entry(lo).or_default().push((c, hi));
    }
    let us = &system.eigenvectors;
    let ub = &bath.eigenvectors;
    let mut blocks = vec![Mat::<c64>::zeros(nb, nb); ns * ns];
    for (lo, terms) in groups {
        let mut a = Mat::<c64>::zeros(ns, ns);
        for (c, hi) in terms {
            for b in 0..ns {
                let (r, ph) = hi.apply(b);
                a[(r, b)] += ph * c;
            }
        }
        let a_rot = us.adjoint() * &a * us;
        let mut pu = Mat::<c64>::zeros(nb, nb);
        for b in 0..nb {
            let (r, ph) = lo.apply(b);
            for k in 0..nb {
                pu[(r, k)] = ph * ub[(b, k)];
            }
        }
        let r_rot = ub.adjoint() * &pu;
        for mu in 0..ns {
            for nu in 0..ns {
                let f = a_rot[(mu, nu)];
                if f.norm() == 0.0 {
                    continue;
                }
                let blk = &mut blocks[mu * ns + nu];
                for j in 0..nb {
                    for i in 0..nb {
                        blk[(i, j)] += f * r_rot[(i, j)];
                    }
                }
            }
        }
    }
    Ok(RotatedCoupling { blocks, eps: system.eigenvalues.clone(), bath_energies: bath.eigenvalues.clone() })
}

/// Rotate a dense coupling: `(U_S ⊗ U_B)† X (U_S ⊗ U_B)`.
pub fn rotate_dense(x: &Mat<c64>, system: &SpectrumBundle, bath: &SpectrumBundle) -> Result<RotatedCoupling, XStatsError> {
    check_dims(x.nrows(), system, bath)?;
    let (ns, nb) = (system.dim(), bath.dim());
    let us = &system.eigenvectors;
    let ub = &bath.eigenvectors;
    let u = Mat::<c64>::from_fn(ns * nb, ns * nb, |r, c| us[(r / nb, c / nb)] * ub[(r % nb, c % nb)]);
    let rot = u.adjoint() * x * &u;
    let blocks = (0..ns * ns)
        .map(|k| {
            let (mu, nu) = (k / ns, k % ns);
            rot.as_ref().submatrix(mu * nb, nu * nb, nb, nb).to_owned()
        })
        .collect();
    Ok(RotatedCoupling { blocks, eps: system.eigenvalues.clone(), bath_energies: bath.eigenvalues.clone() })
}

/// Energy binning of the diagonal and anti-diagonal band profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    /// Half-width of the strip around the diagonal / anti-diagonal line.
    pub strip: f64,
    pub bin_width: f64,
    /// Half-range of `E_i - E_j` along the anti-diagonal.
    pub anti_range: f64,
    /// Half-range of `E_i + E_j` along the diagonal.
    pub diag_range: f64,
    /// Values of `E_i + E_j` at which anti-diagonal cuts are taken.
    pub anti_offsets: Vec<f64>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec { strip: 0.05, bin_width: 0.05, anti_range: 3.0, diag_range: 6.0, anti_offsets: vec![0.0] }
    }
}

/// Mergeable binned mean of `|X|²` along one energy axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub lo: f64,
    pub bin_width: f64,
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Profile {
    fn new(half_range: f64, bin_width: f64) -> Self {
        let n = (2.0 * half_range / bin_width).round().max(1.0) as usize;
        Profile { lo: -(n as f64) * bin_width / 2.0, bin_width, sums: vec![0.0; n], counts: vec![0; n] }
    }

    fn add(&mut self, at: f64, v: f64) {
        let u = (at - self.lo) / self.bin_width;
        if u >= 0.0 && u < self.sums.len() as f64 {
            self.sums[u as usize] += v;
            self.counts[u as usize] += 1;
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.sums.len()).map(|k| self.lo + (k as f64 + 0.5) * self.bin_width).collect()
    }

    /// Bin means; `NaN` when empty.
    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect()
    }

    pub fn merge(&mut self, other: &Profile) {
        assert_eq!(self.sums.len(), other.sums.len());
        for k in 0..self.sums.len() {
            self.sums[k] += other.sums[k];
            self.counts[k] += other.counts[k];
        }
    }
}

/// Boxed variance map of one `(μ, ν)` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMap {
    pub mu: usize,
    pub nu: usize,
    /// Row-major over `n_boxes × n_boxes`.
    pub sums: Vec<f64>,
    pub counts: Vec<u64>,
    /// Count-weighted sums of the row and column energies of each box.
    pub e_row_sums: Vec<f64>,
    pub e_col_sums: Vec<f64>,
    /// Diagonal profile against `E_i + E_j`.
    pub diagonal: Profile,
    /// Anti-diagonal profiles against `E_i - E_j`, one per offset.
    pub anti_diagonal: Vec<Profile>,
}

impl BlockMap {
    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().zip(&self.counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect()
    }

    /// Mean `(E_i, E_j)` of box `k`.
    pub fn label(&self, k: usize) -> (f64, f64) {
        let c = self.counts[k].max(1) as f64;
        (self.e_row_sums[k] / c, self.e_col_sums[k] / c)
    }
}

/// Boxed `|X|²` over all blocks, accumulated over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceMap {
    pub n_system: usize,
    pub n_bath: usize,
    pub box_elements: usize,
    pub n_boxes: usize,
    pub profile: ProfileSpec,
    pub blocks: Vec<BlockMap>,
    pub n_samples: u64,
}

impl VarianceMap {
    pub fn block(&self, mu: usize, nu: usize) -> &BlockMap {
        &self.blocks[mu * self.n_system + nu]
    }

    pub fn merge(&mut self, other: &VarianceMap) -> Result<(), XStatsError> {
        if self.n_system != other.n_system || self.n_bath != other.n_bath || self.box_elements != other.box_elements || self.profile != other.profile {
            return Err(XStatsError::Dimension("variance maps with different layouts".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for k in 0..a.sums.len() {
                a.sums[k] += b.sums[k];
                a.counts[k] += b.counts[k];
                a.e_row_sums[k] += b.e_row_sums[k];
                a.e_col_sums[k] += b.e_col_sums[k];
            }
            a.diagonal.merge(&b.diagonal);
            for (p, q) in a.anti_diagonal.iter_mut().zip(&b.anti_diagonal) {
                p.merge(q);
            }
        }
        self.n_samples += other.n_samples;
        Ok(())
    }

    /// Diagonal profile pooled over blocks.
    pub fn pooled_diagonal(&self) -> Profile {
        let mut p = self.blocks[0].diagonal.clone();
        for b in &self.blocks[1..] {
            p.merge(&b.diagonal);
        }
        p
    }

    /// Anti-diagonal profile at offset index `k`, pooled over blocks.
    pub fn pooled_anti_diagonal(&self, k: usize) -> Profile {
        let mut p = self.blocks[0].anti_diagonal[k].clone();
        for b in &self.blocks[1..] {
            p.merge(&b.anti_diagonal[k]);
        }
        p
    }
}

/// Box-average `|X_{μi,νj}|²` over `box_elements × box_elements` index
/// boxes (the last box on each axis may be smaller). Exact diagonal elements
/// `μi = νj` are left out: their variance is twice the off-diagonal one.
pub fn box_variances(rot: &RotatedCoupling, box_elements: usize, profile: &ProfileSpec) -> Result<VarianceMap, XStatsError> {
    let (ns, nb) = (rot.n_system(), rot.n_bath());
    if box_elements < 2 {
        return Err(XStatsError::BadArgument("box_elements must be >= 2".into()));
    }
    if nb < box_elements {
        return Err(XStatsError::BadArgument(format!("block of {nb} is smaller than one box of {box_elements}")));
    }
    if !(profile.strip > 0.0 && profile.bin_width > 0.0 && profile.anti_range > 0.0 && profile.diag_range > 0.0) {
        return Err(XStatsError::BadArgument("profile widths must be positive".into()));
    }
    let nbox = nb.div_ceil(box_elements);
    let e = &rot.bath_energies;
    let mut blocks = Vec::with_capacity(ns * ns);
    for mu in 0..ns {
        for nu in 0..ns {
            let x = rot.block(mu, nu);
            let mut bm = BlockMap {
                mu,
                nu,
                sums: vec![0.0; nbox * nbox],
                counts: vec![0; nbox * nbox],
                e_row_sums: vec![0.0; nbox * nbox],
                e_col_sums: vec![0.0; nbox * nbox],
                diagonal: Profile::new(profile.diag_range, profile.bin_width),
                anti_diagonal: profile.anti_offsets.iter().map(|_| Profile::new(profile.anti_range, profile.bin_width)).collect(),
            };
            for j in 0..nb {
                for i in 0..nb {
                    if mu == nu && i == j {
                        continue;
                    }
                    let v = x[(i, j)].norm_sqr();
                    let k = (i / box_elements) * nbox + j / box_elements;
                    bm.sums[k] += v;
                    bm.counts[k] += 1;
                    bm.e_row_sums[k] += e[i];
                    bm.e_col_sums[k] += e[j];
                    let (s, d) = (e[i] + e[j], e[i] - e[j]);
                    if d.abs() <= profile.strip {
                        bm.diagonal.add(s, v);
                    }
                    for (p, &off) in bm.anti_diagonal.iter_mut().zip(&profile.anti_offsets) {
                        if (s - off).abs() <= profile.strip {
                            p.add(d, v);
                        }
                    }
                }
            }
            blocks.push(bm);
        }
    }
    Ok(VarianceMap { n_system: ns, n_bath: nb, box_elements, n_boxes: nbox, profile: profile.clone(), blocks, n_samples: 1 })
}

/// Gaussian widths of the band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringWidths {
    /// Width of `1/profile` along the diagonal, against `E_i + E_j`.
    pub delta_d: f64,
    pub delta_d_stderr: f64,
    /// Width of the anti-diagonal profile against `E_i - E_j`.
    pub delta_ad: f64,
    pub delta_ad_stderr: f64,
    /// `√2 Δ_ad`.
    pub delta0: f64,
    pub delta0_stderr: f64,
    /// `√2` times the width after dividing out `1/√(ρ_B(E_i) ρ_B(E_j))`;
    /// `NaN` without a bath density.
    pub delta0_corrected: f64,
    pub delta0_corrected_stderr: f64,
}

fn profile_points(p: &Profile, mut keep: impl FnMut(f64) -> bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for ((c, m), &n) in p.centers().into_iter().zip(p.means()).zip(&p.counts) {
        if n > 0 && m > 0.0 && keep(c) {
            x.push(c);
            y.push(m);
            w.push(n as f64);
        }
    }
    (x, y, w)
}

/// Gaussian fits of the pooled band profiles. Bins with `|E_i - E_j| <
/// central_exclusion` are left out of the anti-diagonal fit. The first
/// anti-diagonal offset is used.
pub fn fit_scattering_widths(
    map: &VarianceMap,
    bath_density: Option<&DensityModel>,
    central_exclusion: f64,
) -> Result<ScatteringWidths, XStatsError> {
    let diag = map.pooled_diagonal();
    let (x, y, w) = profile_points(&diag, |_| true);
    if x.len() < 10 {
        return Err(XStatsError::TooFew { need: 10, got: x.len() });
    }
    let inv: Vec<f64> = y.iter().map(|v| 1.0 / v).collect();
    let fd = fit_gaussian(&x, &inv, Some(&w))?;

    if map.profile.anti_offsets.is_empty() {
        return Err(XStatsError::BadArgument("no anti-diagonal offsets".into()));
    }
    let off = map.profile.anti_offsets[0];
    let anti = map.pooled_anti_diagonal(0);
    let (x, y, w) = profile_points(&anti, |c| c.abs() >= central_exclusion);
    if x.len() < 10 {
        return Err(XStatsError::TooFew { need: 10, got: x.len() });
    }
    let fa = fit_gaussian(&x, &y, Some(&w))?;
    let sq2 = std::f64::consts::SQRT_2;

    let (d0c, d0c_err) = match bath_density {
        Some(rho) => {
            let yc: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(&d, &v)| {
                    let (ei, ej) = ((off + d) / 2.0, (off - d) / 2.0);
                    v * (rho.density(ei) * rho.density(ej)).sqrt() / rho.density(off / 2.0)
                })
                .collect();
            let fc = fit_gaussian(&x, &yc, Some(&w))?;
            (sq2 * fc.params[2], sq2 * fc.stderr(2))
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(ScatteringWidths {
        delta_d: fd.params[2],
        delta_d_stderr: fd.stderr(2),
        delta_ad: fa.params[2],
        delta_ad_stderr: fa.stderr(2),
        delta0: sq2 * fa.params[2],
        delta0_stderr: sq2 * fa.stderr(2),
        delta0_corrected: d0c,
        delta0_corrected_stderr: d0c_err,
    })
}

/// Central exclusion of one box width in energy at the band centre.
pub fn one_box_exclusion(box_elements: usize, n_bath: usize, bath_density: &DensityModel) -> f64 {
    box_elements as f64 / (n_bath as f64 * bath_density.density(bath_density.mean))
}

/// Rank-one fit `|X|²_box(μν) ≈ σ²_μν τ²_box`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationResult {
    /// Normalised so that `Σ_μ σ²_μν = 1`.
    pub sigma_sq: Vec<Vec<f64>>,
    /// Bath factor per box (row-major), carrying the normalisation.
    pub tau_sq: Vec<f64>,
    /// `‖P - σ² τ²‖_F / ‖P‖_F` over the boxes used.
    pub residual: f64,
    pub boxes_used: usize,
}

/// Least-squares factorisation on log-profiles. For boxes populated in every
/// block the two-way additive model in `ln P` has a closed-form solution
/// (row and column means), which is the fixed point of alternating least
/// squares.
pub fn check_factorization(map: &VarianceMap) -> Result<FactorizationResult, XStatsError> {
    let ns = map.n_system;
    if ns < 2 {
        return Err(XStatsError::BadArgument("factorisation needs at least two system levels".into()));
    }
    let means: Vec<Vec<f64>> = map.blocks.iter().map(|b| b.means()).collect();
    let nbox = map.n_boxes * map.n_boxes;
    let boxes: Vec<usize> = (0..nbox).filter(|&k| means.iter().all(|m| m[k] > 0.0)).collect();
    if boxes.len() < 2 {
        return Err(XStatsError::TooFew { need: 2, got: boxes.len() });
    }
    let nblk = means.len();
    let logp: Vec<Vec<f64>> = means.iter().map(|m| boxes.iter().map(|&k| m[k].ln()).collect()).collect();
    let a: Vec<f64> = logp.iter().map(|r| r.iter().sum::<f64>() / boxes.len() as f64).collect();
    let abar = a.iter().sum::<f64>() / nblk as f64;
    let c: Vec<f64> = (0..boxes.len()).map(|k| logp.iter().map(|r| r[k]).sum::<f64>() / nblk as f64 - abar).collect();

    let s: Vec<f64> = a.iter().map(|v| v.exp()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for b in 0..nblk {
        for (kk, &k) in boxes.iter().enumerate() {
            let p = means[b][k];
            let fit = s[b] * c[kk].exp();
            num += (p - fit) * (p - fit);
            den += p * p;
        }
    }
    let mut sigma_sq = vec![vec![0.0; ns]; ns];
    let mut col_scale = 0.0;
    for nu in 0..ns {
        let tot: f64 = (0..ns).map(|mu| s[mu * ns + nu]).sum();
        col_scale += tot / ns as f64;
        for mu in 0..ns {
            sigma_sq[mu][nu] = s[mu * ns + nu] / tot;
        }
    }
    let mut tau_sq = vec![f64::NAN; nbox];
    for (kk, &k) in boxes.iter().enumerate() {
        tau_sq[k] = col_scale * c[kk].exp();
    }
    Ok(FactorizationResult { sigma_sq, tau_sq, residual: (num / den).sqrt(), boxes_used: boxes.len() })
}

/// Regression of `ln(diagonal profile)` on `ln(1/ρ_B)` at `E = (E_i + E_j)/2`.
pub fn diagonal_density_slope(map: &VarianceMap, bath_density: &DensityModel, max_abs_energy: f64) -> Result<LinearFit, XStatsError> {
    let (x, y, w) = profile_points(&map.pooled_diagonal(), |s| (s / 2.0).abs() <= max_abs_energy);
    if x.len() < 3 {
        return Err(XStatsError::TooFew { need: 3, got: x.len() });
    }
    let lx: Vec<f64> = x.iter().map(|s| -bath_density.density(s / 2.0).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Ok(linear_fit(&lx, &ly, Some(&w)))
}

/// Largest relative deviation between peak-normalised anti-diagonal
/// profiles at different offsets, over bins with `|E_i - E_j| <= bulk` that
/// hold at least `min_count` elements in every profile.
pub fn anti_diagonal_collapse(map: &VarianceMap, bulk: f64, min_count: u64) -> Result<f64, XStatsError> {
    let n = map.profile.anti_offsets.len();
    if n < 2 {
        return Err(XStatsError::BadArgument("need at least two anti-diagonal offsets".into()));
    }
    let profiles: Vec<Profile> = (0..n).map(|k| map.pooled_anti_diagonal(k)).collect();
    let centers = profiles[0].centers();
    let bins: Vec<usize> =
        (0..centers.len()).filter(|&b| centers[b].abs() <= bulk && profiles.iter().all(|p| p.counts[b] >= min_count)).collect();
    if bins.is_empty() {
        return Err(XStatsError::TooFew { need: 1, got: 0 });
    }
    let norm: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| {
            let m = p.means();
            let peak = bins.iter().map(|&b| m[b]).fold(0.0, f64::max);
            bins.iter().map(|&b| m[b] / peak).collect()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..bins.len() {
        let r = &norm[0][k];
        for p in &norm[1..] {
            worst = worst.max((p[k] - r).abs() / r);
        }
    }
    Ok(worst)
}

/// Element samples from an energy box, accumulated over samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementSamples {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    /// Diagonal elements `X_{μi,μi}` with `E_i` in both ranges.
    pub diag: Vec<f64>,
}

impl ElementSamples {
    /// Collect from block `(μ, ν)` all elements with `E_i ∈ rows` and
    /// `E_j ∈ cols`.
    pub fn collect(&mut self, rot: &RotatedCoupling, mu: usize, nu: usize, rows: (f64, f64), cols: (f64, f64)) {
        let e = &rot.bath_energies;
        let x = rot.block(mu, nu);
        let inside = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        let ri: Vec<usize> = (0..e.len()).filter(|&i| inside(e[i], rows)).collect();
        let cj: Vec<usize> = (0..e.len()).filter(|&j| inside(e[j], cols)).collect();
        for &j in &cj {
            for &i in &ri {
                if mu == nu && i == j {
                    self.diag.push(x[(i, i)].re);
                } else {
                    self.re.push(x[(i, j)].re);
                    self.im.push(x[(i, j)].im);
                }
            }
        }
    }

    pub fn merge(&mut self, other: &ElementSamples) {
        self.re.extend_from_slice(&other.re);
        self.im.extend_from_slice(&other.im);
        self.diag.extend_from_slice(&other.diag);
    }
}

/// Gaussian and exponential checks of element distributions in a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementReport {
    pub n_offdiag: usize,
    pub var_re: f64,
    pub var_im: f64,
    pub re_normal: ChiSquareTest,
    pub im_normal: ChiSquareTest,
    pub n_diag: usize,
    pub var_diag: Option<f64>,
    /// `var(diag) / ((var_re + var_im)/2)`; two for a unitary ensemble.
    pub diag_ratio: Option<f64>,
    pub diag_normal: Option<ChiSquareTest>,
    pub magnitude: MagnitudeFit,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Needs at least 100 off-diagonal elements; diagonal statistics need 20.
pub fn element_distribution_tests(samples: &ElementSamples, n_bins: usize) -> Result<ElementReport, XStatsError> {
    let n = samples.re.len();
    if n < 100 {
        return Err(XStatsError::TooFew { need: 100, got: n });
    }
    let (mr, vr) = mean_var(&samples.re);
    let (mi, vi) = mean_var(&samples.im);
    let re_normal = chi_square_normal(&samples.re, mr, vr.sqrt(), n_bins, 2);
    let im_normal = chi_square_normal(&samples.im, mi, vi.sqrt(), n_bins, 2);
    let abs2: Vec<f64> = samples.re.iter().zip(&samples.im).map(|(a, b)| a * a + b * b).collect();
    let magnitude = magnitude_distribution(&abs2, n_bins)?;
    let nd = samples.diag.len();
    let (var_diag, diag_ratio, diag_normal) = if nd >= 20 {
        let (md, vd) = mean_var(&samples.diag);
        let bins = n_bins.min(nd / 5).max(2);
        (Some(vd), Some(vd / ((vr + vi) / 2.0)), Some(chi_square_normal(&samples.diag, md, vd.sqrt(), bins, 2)))
    } else {
        (None, None, None)
    };
    Ok(ElementReport { n_offdiag: n, var_re: vr, var_im: vi, re_normal, im_normal, n_diag: nd, var_diag, diag_ratio, diag_normal, magnitude })
}
