//! Campaign configuration: TOML parsing, defaults, validation and hashing.

use std::path::{Path, PathBuf};

use eigentherm_core::model::{build_lattice, Geometry, LatticeSpec, ModelParams};
use eigentherm_core::xstats::ProfileSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ensemble::{LineshapeSpec, SampleOptions, XStatsSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("line {line}: {key}: {message}")]
    Invalid { line: usize, key: String, message: String },
    #[error("{key}: {message}")]
    InvalidNoLine { key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    #[default]
    Ladder,
    Chain,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub sites: usize,
    #[serde(default = "one")]
    pub system_sites: usize,
    #[serde(default)]
    pub geometry: GeometryKind,
    /// 1-based links, required for `geometry = "custom"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<[usize; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    /// Coupling variances to scan.
    pub t: Vec<f64>,
    #[serde(default = "default_h1")]
    pub h1: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineshapeConfig {
    pub mu: usize,
    pub nu: usize,
    /// Defaults to the level splitting `ε_ν - ε_μ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<f64>,
    pub half_range: f64,
    pub bin_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_bath_samples")]
    pub bath_samples: u64,
    #[serde(default = "default_couplings")]
    pub couplings_per_bath: u64,
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    /// Half-width of the eigenvalue window around each target.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Cap on window states per sample (the averaging count).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_av: Option<usize>,
    /// Half-range of the bath-energy axis of overlap curves; defaults to
    /// `30 t_max`, at least 0.02.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_half_range: Option<f64>,
    #[serde(default = "default_curve_bins")]
    pub curve_bins: usize,
    #[serde(default = "default_phase_bins")]
    pub phase_bins: usize,
    #[serde(default = "default_box_elements")]
    pub box_elements: usize,
    #[serde(default = "ProfileSpec::default")]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub lineshapes: Vec<LineshapeConfig>,
    /// Bins of the spectral-density histograms and goodness-of-fit tests.
    #[serde(default = "default_density_bins")]
    pub density_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "yes")]
    pub overlaps: bool,
    #[serde(default = "yes")]
    pub xstats: bool,
    #[serde(default = "yes")]
    pub rdm: bool,
    #[serde(default = "yes")]
    pub predictions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "one")]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub params: ParamsConfig,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleConfig,
    #[serde(default = "default_analysis")]
    pub analysis: AnalysisConfig,
    #[serde(default = "default_output")]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_h1() -> f64 {
    0.1
}
fn default_bath_samples() -> u64 {
    10
}
fn default_couplings() -> u64 {
    2
}
fn default_targets() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5]
}
fn default_window() -> f64 {
    0.05
}
fn default_curve_bins() -> usize {
    60
}
fn default_phase_bins() -> usize {
    50
}
fn default_box_elements() -> usize {
    16
}
fn default_density_bins() -> usize {
    50
}
fn default_dir() -> PathBuf {
    PathBuf::from("eigentherm-out")
}
fn default_ensemble() -> EnsembleConfig {
    toml::from_str("").expect("ensemble defaults")
}
fn default_analysis() -> AnalysisConfig {
    toml::from_str("").expect("analysis defaults")
}
fn default_output() -> OutputConfig {
    toml::from_str("").expect("output defaults")
}

/// Parse and validate configuration text.
pub fn parse_config_str(src: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| ConfigError::Syntax(syntax_message(src, &e)))?;
    cfg.validate().map_err(|(key, message)| match line_of(src, &key) {
        Some(line) => ConfigError::Invalid { line, key, message },
        None => ConfigError::InvalidNoLine { key, message },
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config_str(&src)
}

fn syntax_message(src: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = src[..span.start.min(src.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

// 1-based line of `section.key`, or of the section header when the key is absent.
fn line_of(src: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.split_once('.')?;
    let key = key.split(['[', '.']).next().unwrap_or(key);
    let mut in_section = false;
    let mut header = None;
    for (k, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line.trim_matches(|c| c == '[' || c == ']').trim() == section;
            if in_section {
                header = Some(k + 1);
            }
            continue;
        }
        if in_section && line.split('=').next().map(str::trim) == Some(key) {
            return Some(k + 1);
        }
    }
    header
}

impl RunConfig {
    /// Config with every default filled, for `sites` and one coupling value.
    pub fn minimal(sites: usize, t: f64) -> Self {
        parse_config_str(&format!("[lattice]\nsites = {sites}\n[params]\nt = [{t:e}]\n")).expect("minimal config is valid")
    }

    pub fn geometry(&self) -> Geometry {
        match self.lattice.geometry {
            GeometryKind::Ladder => Geometry::Ladder,
            GeometryKind::Chain => Geometry::Chain,
            GeometryKind::Custom => Geometry::Custom(self.lattice.links.clone().unwrap_or_default().into_iter().map(|[a, b]| (a, b)).collect()),
        }
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec, ConfigError> {
        build_lattice(self.lattice.sites, self.lattice.system_sites, &self.geometry())
            .map_err(|e| ConfigError::InvalidNoLine { key: "lattice".into(), message: e.to_string() })
    }

    pub fn model_params(&self, spec: &LatticeSpec, t: f64) -> Result<ModelParams, ConfigError> {
        ModelParams::normalized(spec, t, self.params.h1, self.params.seed)
            .map_err(|e| ConfigError::InvalidNoLine { key: "params".into(), message: e.to_string() })
    }

    pub fn t_max(&self) -> f64 {
        self.params.t.iter().cloned().fold(0.0, f64::max)
    }

    /// `Δ_tot` for the normalised bath and the largest coupling.
    pub fn total_width(&self) -> f64 {
        (1.0 + self.t_max() + self.params.h1 * self.params.h1).sqrt()
    }

    pub fn curve_half_range(&self) -> f64 {
        self.ensemble.curve_half_range.unwrap_or((30.0 * self.t_max()).max(0.02))
    }

    fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, m: String| Err((k.to_string(), m));
        if self.params.t.is_empty() {
            return bad("params.t", "at least one coupling value is required".into());
        }
        if let Some(t) = self.params.t.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
            return bad("params.t", format!("coupling variance must be finite and >= 0, got {t}"));
        }
        if !self.params.h1.is_finite() {
            return bad("params.h1", "must be finite".into());
        }
        if self.lattice.geometry == GeometryKind::Custom && self.lattice.links.is_none() {
            return bad("lattice.links", "custom geometry needs a link list".into());
        }
        if self.lattice.geometry != GeometryKind::Custom && self.lattice.links.is_some() {
            return bad("lattice.links", "links are only used with geometry = \"custom\"".into());
        }
        if let Err(e) = build_lattice(self.lattice.sites, self.lattice.system_sites, &self.geometry()) {
            return bad("lattice.sites", e.to_string());
        }
        if self.lattice.sites > 16 {
            return bad("lattice.sites", format!("{} sites exceed the dense-diagonalisation limit of 16", self.lattice.sites));
        }
        let e = &self.ensemble;
        if e.bath_samples < 1 {
            return bad("ensemble.bath_samples", "must be >= 1".into());
        }
        if e.couplings_per_bath < 1 {
            return bad("ensemble.couplings_per_bath", "must be >= 1".into());
        }
        let limit = 3.0 * self.total_width();
        if let Some(l) = e.targets.iter().find(|l| !(l.abs() <= limit)) {
            return bad("ensemble.targets", format!("target {l} lies outside ±3Δ_tot = ±{limit:.4}"));
        }
        if !(e.window > 0.0) || !e.window.is_finite() {
            return bad("ensemble.window", "must be > 0".into());
        }
        if e.n_av == Some(0) {
            return bad("ensemble.n_av", "must be >= 1".into());
        }
        if let Some(h) = e.curve_half_range {
            if !(h > 0.0) || !h.is_finite() {
                return bad("ensemble.curve_half_range", "must be > 0".into());
            }
        }
        if e.curve_bins < 3 {
            return bad("ensemble.curve_bins", "need at least 3 bins".into());
        }
        if e.phase_bins == 1 {
            return bad("ensemble.phase_bins", "use 0 to disable or at least 2 bins".into());
        }
        if e.box_elements < 2 {
            return bad("ensemble.box_elements", "must be >= 2".into());
        }
        let nb = 1usize << (self.lattice.sites - self.lattice.system_sites);
        if self.analysis.xstats && e.box_elements > nb {
            return bad("ensemble.box_elements", format!("larger than the bath dimension {nb}"));
        }
        let p = &e.profile;
        if ![p.strip, p.bin_width, p.anti_range, p.diag_range].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("ensemble.profile", "strip, bin_width and ranges must be > 0".into());
        }
        if p.anti_offsets.is_empty() {
            return bad("ensemble.profile", "need at least one anti-diagonal offset".into());
        }
        if e.density_bins < 5 {
            return bad("ensemble.density_bins", "need at least 5 bins".into());
        }
        let ns = 1usize << self.lattice.system_sites;
        for l in &e.lineshapes {
            if l.mu >= ns || l.nu >= ns {
                return bad("ensemble.lineshapes", format!("level index out of range for {ns} system levels"));
            }
            if !(l.half_range > 0.0) || !(l.bin_width > 0.0) || l.bin_width > l.half_range {
                return bad("ensemble.lineshapes", "need 0 < bin_width <= half_range".into());
            }
        }
        if !e.lineshapes.is_empty() && self.lattice.system_sites != 1 {
            // The default centre uses the two-level splitting 2 h1.
            if e.lineshapes.iter().any(|l| l.centre.is_none()) {
                return bad("ensemble.lineshapes", "centre is required when S has more than one site".into());
            }
        }
        if self.output.workers < 1 {
            return bad("output.workers", "must be >= 1".into());
        }
        Ok(())
    }

    /// Canonical TOML text of the fully defaulted config.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical JSON of everything that affects results
    /// (the output section is excluded).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(o) = v.as_object_mut() {
            o.remove("output");
        }
        let bytes = serde_json::to_vec(&v).expect("json");
        hex(&Sha256::digest(bytes))
    }

    /// Options of one sample task.
    pub fn sample_options(&self) -> SampleOptions {
        let e = &self.ensemble;
        let a = &self.analysis;
        let h1 = self.params.h1;
        SampleOptions {
            targets: e.targets.clone(),
            window: e.window,
            max_states: e.n_av,
            curve_half_range: self.curve_half_range(),
            curve_bins: e.curve_bins,
            overlaps: a.overlaps,
            rdm: a.rdm,
            lineshapes: e
                .lineshapes
                .iter()
                .map(|l| LineshapeSpec {
                    mu: l.mu,
                    nu: l.nu,
                    // Two-level S: ε = ∓h1 by index.
                    centre: l.centre.unwrap_or(2.0 * h1 * (l.nu as f64 - l.mu as f64)),
                    half_range: l.half_range,
                    bin_width: l.bin_width,
                })
                .collect(),
            xstats: a.xstats.then(|| XStatsSpec { box_elements: e.box_elements, profile: e.profile.clone() }),
            phase_bins: if a.overlaps { e.phase_bins } else { 0 },
            spectrum: true,
            max_dim: 1 << 16,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
