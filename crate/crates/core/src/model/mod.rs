//! Lattice geometry and disordered two-qubit Hamiltonians.
//!
//! The register is split into a system `S` (sites `1..=L_S`) and a bath `B`
//! (the remaining sites). Basis index of a product state is `mu * N_B + i`.

mod dump;
pub mod pauli;

use std::collections::{BTreeSet, VecDeque};

use faer::{c64, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dump::{read_operator_dump, write_operator_dump, OperatorDump, DUMP_MAGIC};
pub use pauli::{Axis, PauliString, PauliSum};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("lattice needs at least 3 sites, got {0}")]
    TooFewSites(usize),
    #[error("system size {l_s} must satisfy 1 <= L_S <= L - 2 (L = {l})")]
    BadSystemSize { l: usize, l_s: usize },
    #[error("link ({0}, {1}) is out of range or a self loop")]
    BadLink(usize, usize),
    #[error("link ({0}, {1}) appears twice")]
    DuplicateLink(usize, usize),
    #[error("bath subgraph is disconnected")]
    DisconnectedBath,
    #[error("system is not linked to any bath site")]
    NoCoupling,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("operator dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Two-leg ladder, site k at column (k-1)/2 and row (k-1)%2.
    Ladder,
    /// Open chain with nearest-neighbour links.
    Chain,
    /// Explicit 1-based link list.
    Custom(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n_sites: usize,
    pub n_system_sites: usize,
    /// Sorted 1-based links with `i < j`.
    pub links: Vec<(usize, usize)>,
    /// Bath sites linked to at least one system site.
    pub region_r: Vec<usize>,
    /// Site carrying the symmetry-breaking random field.
    pub field_site: usize,
}

pub fn build_lattice(n_sites: usize, n_system_sites: usize, geometry: &Geometry) -> Result<LatticeSpec, ModelError> {
    if n_sites < 3 {
        return Err(ModelError::TooFewSites(n_sites));
    }
    if n_system_sites < 1 || n_system_sites + 2 > n_sites {
        return Err(ModelError::BadSystemSize { l: n_sites, l_s: n_system_sites });
    }
    let raw: Vec<(usize, usize)> = match geometry {
        Geometry::Ladder => {
            let mut v = Vec::new();
            for k in 1..=n_sites {
                if k % 2 == 1 && k < n_sites {
                    v.push((k, k + 1));
                }
                if k + 2 <= n_sites {
                    v.push((k, k + 2));
                }
            }
            v
        }
        Geometry::Chain => (1..n_sites).map(|k| (k, k + 1)).collect(),
        Geometry::Custom(v) => v.clone(),
    };
    let mut links = BTreeSet::new();
    for &(a, b) in &raw {
        if a == b || a < 1 || b < 1 || a > n_sites || b > n_sites {
            return Err(ModelError::BadLink(a, b));
        }
        let l = (a.min(b), a.max(b));
        if !links.insert(l) {
            return Err(ModelError::DuplicateLink(l.0, l.1));
        }
    }
    let links: Vec<_> = links.into_iter().collect();
    let is_sys = |s: usize| s <= n_system_sites;

    let bath: Vec<usize> = (n_system_sites + 1..=n_sites).collect();
    let mut seen = vec![false; n_sites + 1];
    let mut queue = VecDeque::from([bath[0]]);
    seen[bath[0]] = true;
    while let Some(s) = queue.pop_front() {
        for &(a, b) in &links {
            let other = if a == s { b } else if b == s { a } else { continue };
            if !is_sys(other) && !seen[other] {
                seen[other] = true;
                queue.push_back(other);
            }
        }
    }
    if bath.iter().any(|&s| !seen[s]) {
        return Err(ModelError::DisconnectedBath);
    }

    let region_r: BTreeSet<usize> = links
        .iter()
        .filter_map(|&(a, b)| match (is_sys(a), is_sys(b)) {
            (true, false) => Some(b),
            (false, true) => Some(a),
            _ => None,
        })
        .collect();
    if region_r.is_empty() {
        return Err(ModelError::NoCoupling);
    }
    Ok(LatticeSpec {
        n_sites,
        n_system_sites,
        links,
        region_r: region_r.into_iter().collect(),
        field_site: n_sites,
    })
}

impl LatticeSpec {
    pub fn n_bath_sites(&self) -> usize {
        self.n_sites - self.n_system_sites
    }
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }
    pub fn system_dim(&self) -> usize {
        1 << self.n_system_sites
    }
    pub fn bath_dim(&self) -> usize {
        1 << self.n_bath_sites()
    }
    pub fn is_system(&self, site: usize) -> bool {
        site <= self.n_system_sites
    }
    pub fn system_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied().filter(|&(a, b)| self.is_system(a) && self.is_system(b))
    }
    pub fn bath_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied().filter(|&(a, b)| !self.is_system(a) && !self.is_system(b))
    }
    /// Links with one end in `S` and one in `R`.
    pub fn coupling_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.links.iter().copied().filter(|&(a, b)| self.is_system(a) != self.is_system(b))
    }
}

/// Coupling strengths and normalisations of one Hamiltonian ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Variance of X per unit dimension, `Tr X^2 / N`.
    pub t: f64,
    pub h1: f64,
    pub kappa_b_sq: f64,
    pub kappa_field_sq: f64,
    pub kappa_x_sq: f64,
    pub master_seed: u64,
}

impl ModelParams {
    /// Normalise so that `Tr H_B^2 / N_B = 1` and `Tr X^2 / N = t` on average.
    pub fn normalized(spec: &LatticeSpec, t: f64, h1: f64, master_seed: u64) -> Result<Self, ModelError> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(ModelError::BadParam(format!("coupling variance t = {t}")));
        }
        if !h1.is_finite() {
            return Err(ModelError::BadParam(format!("h1 = {h1}")));
        }
        let n_bath = spec.bath_links().count();
        let n_sr = spec.coupling_links().count();
        let kappa_b_sq = 1.0 / (9 * n_bath + 3) as f64;
        Ok(ModelParams {
            t,
            h1,
            kappa_b_sq,
            kappa_field_sq: kappa_b_sq,
            kappa_x_sq: t / (9 * n_sr) as f64,
            master_seed,
        })
    }

    pub fn with_t(&self, spec: &LatticeSpec, t: f64) -> Result<Self, ModelError> {
        let mut p = Self::normalized(spec, t, self.h1, self.master_seed)?;
        p.kappa_b_sq = self.kappa_b_sq;
        p.kappa_field_sq = self.kappa_field_sq;
        Ok(p)
    }
}

/// Identifies one draw: bath disorder `bath` and coupling draw `coupling`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleIndex {
    pub bath: u64,
    pub coupling: u64,
}

impl From<u64> for SampleIndex {
    fn from(bath: u64) -> Self {
        SampleIndex { bath, coupling: 0 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based generator for one bath index and stream.
pub fn sample_rng(master_seed: u64, bath: u64, stream: u64) -> ChaCha20Rng {
    let mut seed = [0u8; 32];
    let mut s = splitmix64(master_seed) ^ splitmix64(bath.wrapping_add(0x5851_f42d_4c95_7f2d));
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(stream);
    rng
}

/// One disorder realisation, stored as Pauli sums.
#[derive(Clone, Debug)]
pub struct HamiltonianSample {
    pub spec: LatticeSpec,
    pub params: ModelParams,
    pub index: SampleIndex,
    /// On the `L_S` system qubits.
    pub h_s: PauliSum,
    /// On the bath qubits.
    pub h_b: PauliSum,
    /// On the full register.
    pub x: PauliSum,
}

pub fn sample_hamiltonian(spec: &LatticeSpec, params: &ModelParams, index: impl Into<SampleIndex>) -> HamiltonianSample {
    let index = index.into();
    let (l, l_s) = (spec.n_sites, spec.n_system_sites);
    let l_b = l - l_s;
    let mut rng = sample_rng(params.master_seed, index.bath, 0);
    let normal = |rng: &mut ChaCha20Rng| -> f64 { rng.sample(StandardNormal) };

    let mut h_s = PauliSum::new(l_s);
    h_s.push(params.h1, PauliString::single(l_s, 1, 3));
    let kb = params.kappa_b_sq.sqrt();
    for (a, b) in spec.system_links() {
        for (ax, bx) in axis_pairs() {
            h_s.push(kb * normal(&mut rng), PauliString::pair(l_s, a, ax, b, bx));
        }
    }

    let mut h_b = PauliSum::new(l_b);
    for (a, b) in spec.bath_links() {
        for (ax, bx) in axis_pairs() {
            h_b.push(kb * normal(&mut rng), PauliString::pair(l_b, a - l_s, ax, b - l_s, bx));
        }
    }
    let kf = params.kappa_field_sq.sqrt();
    for ax in 1..=3 {
        h_b.push(kf * normal(&mut rng), PauliString::single(l_b, spec.field_site - l_s, ax));
    }

    let mut rng = sample_rng(params.master_seed, index.bath, 1 + index.coupling);
    let kx = params.kappa_x_sq.sqrt();
    let mut x = PauliSum::new(l);
    for (a, b) in spec.coupling_links() {
        for (ax, bx) in axis_pairs() {
            x.push(kx * normal(&mut rng), PauliString::pair(l, a, ax, b, bx));
        }
    }
    HamiltonianSample { spec: spec.clone(), params: *params, index, h_s, h_b, x }
}

fn axis_pairs() -> impl Iterator<Item = (Axis, Axis)> {
    (1..=3).flat_map(|a| (1..=3).map(move |b| (a, b)))
}

impl HamiltonianSample {
    pub fn n_bath_qubits(&self) -> usize {
        self.spec.n_bath_sites()
    }

    /// `H_S (x) 1 + 1 (x) H_B + X` as one Pauli sum.
    pub fn total(&self) -> PauliSum {
        let nb = self.n_bath_qubits();
        let mut h = self.h_s.embed_high(nb);
        h.extend(&self.h_b.embed_low(self.spec.n_system_sites));
        h.extend(&self.x);
        h
    }

    /// `H_S (x) 1 + 1 (x) H_B`.
    pub fn unperturbed(&self) -> PauliSum {
        let mut h = self.h_s.embed_high(self.n_bath_qubits());
        h.extend(&self.h_b.embed_low(self.spec.n_system_sites));
        h
    }

    pub fn total_dense(&self) -> Mat<c64> {
        self.total().to_dense()
    }

    /// Same draw with X rescaled to coupling variance `t`.
    pub fn with_t(&self, t: f64) -> Result<HamiltonianSample, ModelError> {
        let params = self.params.with_t(&self.spec, t)?;
        let scale = if self.params.kappa_x_sq > 0.0 {
            (params.kappa_x_sq / self.params.kappa_x_sq).sqrt()
        } else {
            return Ok(sample_hamiltonian(&self.spec, &params, self.index));
        };
        let mut out = self.clone();
        out.params = params;
        for term in &mut out.x.terms {
            term.0 *= scale;
        }
        Ok(out)
    }
}

/// `Tr(A^2)/N` for a dense Hermitian operator, i.e. `||A||_F^2 / N`.
pub fn matrix_variance(a: &Mat<c64>) -> f64 {
    let n = a.nrows();
    let f = a.norm_l2();
    f * f / n as f64
}
