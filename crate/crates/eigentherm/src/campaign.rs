//! Campaign execution: the task queue, the single store writer, resume and
//! the stage commands.
//!
//! A task is one `(t, H_B sample, X sample)` triple. Workers compute tasks
//! and send results over a channel; only the calling thread writes to the
//! store. Aggregates are always rebuilt from the stored task files in task
//! order, so they are independent of the worker count and of interruptions.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Instant;

use eigentherm_core::model::{sample_hamiltonian, SampleIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::ensemble::{analyze_sample, EnsembleAggregate, SampleResult};
use crate::stages;
use crate::store::{ResultStore, RunManifest, StageRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Unavailable(String),
    #[error("output directory {dir} holds results of another configuration (hash {found}); use --force to overwrite")]
    Mismatch { dir: PathBuf, found: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{failed} of {total} sample tasks failed")]
    Partial { failed: usize, total: usize },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code of the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Unavailable(_) | PipelineError::Mismatch { .. } => 2,
            PipelineError::Numeric(_) => 3,
            PipelineError::Partial { .. } => 4,
            PipelineError::Io(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Diagonalize,
    Overlaps,
    Fit,
    Xstats,
    Predict,
    Rdm,
    Report,
}

impl Stage {
    /// Stages of a full `run`, in execution order.
    pub const ALL: [Stage; 8] = [Stage::Generate, Stage::Diagonalize, Stage::Overlaps, Stage::Fit, Stage::Xstats, Stage::Predict, Stage::Rdm, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Diagonalize => "diagonalize",
            Stage::Overlaps => "overlaps",
            Stage::Fit => "fit",
            Stage::Xstats => "xstats",
            Stage::Predict => "predict",
            Stage::Rdm => "rdm",
            Stage::Report => "report",
        }
    }

    fn needs_tasks(self) -> bool {
        !matches!(self, Stage::Generate | Stage::Report)
    }

    /// Why the stage cannot run under `cfg`, if it cannot.
    fn disabled_by(self, cfg: &RunConfig) -> Option<&'static str> {
        let a = &cfg.analysis;
        match self {
            Stage::Overlaps | Stage::Fit if !a.overlaps => Some("analysis.overlaps is off"),
            Stage::Xstats if !a.xstats => Some("analysis.xstats is off"),
            Stage::Rdm if !a.rdm => Some("analysis.rdm is off"),
            Stage::Predict if !a.predictions => Some("analysis.predictions is off"),
            Stage::Predict if !a.xstats => Some("predictions need analysis.xstats for the band width"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub force: bool,
    /// Stop after computing this many new tasks (simulates an interruption).
    pub task_limit: Option<usize>,
    /// Further stores whose reduced states enter the size-scaling report.
    pub include: Vec<PathBuf>,
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Task {
    pub t_index: usize,
    pub index: SampleIndex,
}

impl Task {
    pub fn id(&self) -> String {
        format!("t{}-b{}-c{}", self.t_index, self.index.bath, self.index.coupling)
    }
}

/// All tasks of a campaign in canonical order: `t`, then bath, then coupling.
pub fn tasks(cfg: &RunConfig) -> Vec<Task> {
    let e = &cfg.ensemble;
    let mut out = Vec::new();
    for t_index in 0..cfg.params.t.len() {
        for bath in 0..e.bath_samples {
            for coupling in 0..e.couplings_per_bath {
                out.push(Task { t_index, index: SampleIndex { bath, coupling } });
            }
        }
    }
    out
}

fn task_file(hash: &str, task: &Task) -> String {
    format!("tasks/{}/{}.json", &hash[..16], task.id())
}

#[derive(Clone, Debug, Default)]
pub struct TaskReport {
    pub total: usize,
    pub computed: usize,
    pub pending: usize,
    pub failed: BTreeMap<String, String>,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into())
}

fn run_task(cfg: &RunConfig, task: &Task) -> Result<SampleResult, String> {
    let attempt = || -> Result<SampleResult, String> {
        let spec = cfg.lattice_spec().map_err(|e| e.to_string())?;
        let params = cfg.model_params(&spec, cfg.params.t[task.t_index]).map_err(|e| e.to_string())?;
        let opts = cfg.sample_options();
        catch_unwind(AssertUnwindSafe(|| analyze_sample(&spec, &params, task.index, &opts)))
            .map_err(panic_message)?
            .map_err(|e| e.to_string())
    };
    attempt().or_else(|first| attempt().map_err(|second| if first == second { first } else { format!("{first}; retry: {second}") }))
}

/// Compute every task without a stored result. Results are written by the
/// calling thread as they arrive.
pub fn ensure_tasks(store: &ResultStore, cfg: &RunConfig, workers: usize, limit: Option<usize>, quiet: bool) -> Result<TaskReport, PipelineError> {
    let hash = cfg.hash();
    let all = tasks(cfg);
    let missing: Vec<Task> = all.iter().copied().filter(|t| !store.exists(&task_file(&hash, t))).collect();
    let todo: Vec<Task> = missing.iter().copied().take(limit.unwrap_or(usize::MAX)).collect();
    let mut report = TaskReport { total: all.len(), pending: missing.len() - todo.len(), ..Default::default() };
    if todo.is_empty() {
        return Ok(report);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| PipelineError::Io(std::io::Error::other(e)))?;
    let (tx, rx) = mpsc::channel::<(Task, Result<SampleResult, String>)>();
    let mut io_error = None;
    let n_todo = todo.len();
    std::thread::scope(|s| {
        let todo = &todo;
        s.spawn(move || pool.install(|| todo.par_iter().for_each_with(tx, |tx, task| {
            let _ = tx.send((*task, run_task(cfg, task)));
        })));
        for (k, (task, result)) in rx.iter().enumerate() {
            match result {
                Ok(r) => {
                    if let Err(e) = store.write_json(&task_file(&hash, &task), &r) {
                        io_error.get_or_insert(e);
                    }
                    report.computed += 1;
                }
                Err(e) => {
                    report.failed.insert(task.id(), e);
                }
            }
            if !quiet {
                eprintln!("[{}/{}] {}", k + 1, n_todo, task.id());
            }
        }
    });
    match io_error {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

/// Stored task results of one `t`, in task order, skipping failed tasks.
pub fn load_results(store: &ResultStore, cfg: &RunConfig, t_index: usize) -> Vec<SampleResult> {
    let hash = cfg.hash();
    tasks(cfg).iter().filter(|t| t.t_index == t_index).filter_map(|t| store.read_json(&task_file(&hash, t))).collect()
}

/// Pooled results per coupling value, plus the bath spectra of distinct
/// `H_B` draws.
pub struct CampaignData {
    pub t: Vec<f64>,
    pub per_t: Vec<EnsembleAggregate>,
    pub bath_eigenvalues: Vec<f64>,
    pub n_bath_samples: usize,
}

pub fn load_campaign(store: &ResultStore, cfg: &RunConfig) -> Result<CampaignData, PipelineError> {
    let mut per_t = Vec::new();
    let mut bath_eigenvalues = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for k in 0..cfg.params.t.len() {
        let results = load_results(store, cfg, k);
        for r in &results {
            if seen.insert(r.index.bath) {
                bath_eigenvalues.extend_from_slice(&r.bath_eigenvalues);
            }
        }
        per_t.push(crate::ensemble::aggregate(&results).map_err(|e| PipelineError::Numeric(e.to_string()))?);
    }
    Ok(CampaignData { t: cfg.params.t.clone(), per_t, bath_eigenvalues, n_bath_samples: seen.len() })
}

/// Run the given stages. Within a multi-stage request an up-to-date stage
/// is skipped.
pub fn execute(cfg: &RunConfig, requested: &[Stage], opts: &RunOptions) -> Result<RunManifest, PipelineError> {
    let store = ResultStore::open(&cfg.output.dir)?;
    let hash = cfg.hash();
    let previous = store.read_manifest();
    let stored_hash = previous.as_ref().map(|m| m.config_hash.clone()).or_else(|| {
        let src = std::fs::read_to_string(store.path("config.toml")).ok()?;
        crate::config::parse_config_str(&src).ok().map(|c| c.hash())
    });
    if opts.force {
        store.clear()?;
    } else if let Some(found) = stored_hash.filter(|h| *h != hash) {
        return Err(PipelineError::Mismatch { dir: cfg.output.dir.clone(), found });
    }
    let mut manifest = match previous {
        Some(m) if !opts.force && m.config_hash == hash => m,
        _ => RunManifest::new(hash.clone()),
    };

    let explicit = requested.len() == 1;
    let mut plan = Vec::new();
    for &s in requested {
        if let Some(why) = s.disabled_by(cfg) {
            if explicit {
                return Err(PipelineError::Unavailable(format!("stage {}: {why}", s.name())));
            }
            manifest.stages.insert(s.name().into(), StageRecord { completed: false, seconds: 0.0, note: Some(why.into()) });
            continue;
        }
        // A stage named on its own always reruns (sample tasks stay cached).
        // Reports over other stores depend on more than this config.
        if explicit || !manifest.stage_done(s.name()) || (s == Stage::Report && !opts.include.is_empty()) {
            plan.push(s);
        }
    }
    if plan.is_empty() && store.read_manifest().is_some() {
        if !opts.quiet {
            eprintln!("up to date ({})", &hash[..16]);
        }
        return Ok(manifest);
    }

    store.invalidate_manifest()?;
    store.write_atomic("config.toml", cfg.emit().as_bytes())?;
    let workers = opts.workers.unwrap_or(cfg.output.workers);

    if plan.iter().any(|s| s.needs_tasks()) {
        let started = Instant::now();
        let rep = ensure_tasks(&store, cfg, workers, opts.task_limit, opts.quiet)?;
        manifest.n_tasks = rep.total;
        manifest.failed_tasks = rep.failed.clone();
        let done = rep.total - rep.pending - manifest.failed_tasks.len();
        manifest.stages.insert("samples".into(), StageRecord { completed: rep.pending == 0, seconds: started.elapsed().as_secs_f64(), note: Some(format!("{done} of {} tasks stored", rep.total)) });
        if rep.pending > 0 {
            // Interrupted: leave the manifest absent.
            return Err(PipelineError::Partial { failed: rep.total - done, total: rep.total });
        }
        if manifest.failed_tasks.len() as f64 > 0.01 * rep.total as f64 {
            store.write_manifest(&mut manifest)?;
            return Err(PipelineError::Partial { failed: manifest.failed_tasks.len(), total: rep.total });
        }
    }

    let data = if plan.iter().any(|s| s.needs_tasks()) { Some(load_campaign(&store, cfg)?) } else { None };
    let mut ctx = stages::StageContext::new(&store, cfg, data.as_ref(), &opts.include);
    let mut first_error = None;
    for s in plan {
        let started = Instant::now();
        let result = ctx.run(s);
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(note) => {
                manifest.stages.insert(s.name().into(), StageRecord { completed: true, seconds, note });
            }
            Err(e) => {
                manifest.stages.insert(s.name().into(), StageRecord { completed: false, seconds, note: Some(e.to_string()) });
                first_error.get_or_insert(e);
            }
        }
    }
    store.write_manifest(&mut manifest)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Pauli-term listing of every sample Hamiltonian.
pub fn generate_terms(cfg: &RunConfig) -> Result<Vec<u8>, PipelineError> {
    let spec = cfg.lattice_spec()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "bath", "coupling", "operator", "pauli", "coefficient"]).map_err(csv_io)?;
    let (l, ls) = (spec.n_sites, spec.n_system_sites);
    for (k, &t) in cfg.params.t.iter().enumerate() {
        let p = cfg.model_params(&spec, t)?;
        for task in tasks(cfg).into_iter().filter(|x| x.t_index == k) {
            let h = sample_hamiltonian(&spec, &p, task.index);
            let mut rows: Vec<(&str, usize, &eigentherm_core::model::PauliSum)> = vec![("x", l, &h.x)];
            // H_S and H_B do not depend on t or the coupling draw.
            if k == 0 && task.index.coupling == 0 {
                rows.insert(0, ("h_b", l - ls, &h.h_b));
                rows.insert(0, ("h_s", ls, &h.h_s));
            }
            for (name, n, op) in rows {
                for (c, ps) in &op.terms {
                    w.write_record([t.to_string(), task.index.bath.to_string(), task.index.coupling.to_string(), name.to_string(), ps.label(n), c.to_string()]).map_err(csv_io)?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| PipelineError::Io(std::io::Error::other(e.to_string())))
}

pub(crate) fn csv_io(e: csv::Error) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e))
}
