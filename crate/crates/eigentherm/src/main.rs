use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eigentherm::campaign::{execute, PipelineError, RunOptions, Stage};
use eigentherm::config::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "eigentherm", version, about = "Eigenstate thermalization campaigns on qubit lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Pauli terms of every sample Hamiltonian.
    Generate(Common),
    /// Spectra and spectral-density fits.
    Diagonalize(Common),
    /// Averaged overlap curves and phase histograms.
    Overlaps(Common),
    /// Lorentzian fits of the overlap curves.
    Fit(Common),
    /// Coupling-matrix variance maps, band widths and factorisation.
    Xstats(Common),
    /// Reduced density matrices, canonical ratios and transition lineshapes.
    Rdm(Common),
    /// Analytic rates and shifts with their comparison to the fits.
    Predict(Common),
    /// SVG plots and the summary table from whatever stages exist.
    Report(Common),
    /// Every stage in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and ETHERM_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute even if the store is up to date, discarding its contents.
    #[arg(long)]
    force: bool,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Further stores whose reduced states enter the size-scaling report.
    #[arg(long)]
    include: Vec<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

fn load(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = parse_config(&c.config)?;
    if let Ok(dir) = std::env::var("ETHERM_OUT") {
        cfg.output.dir = PathBuf::from(dir);
    }
    if let Some(dir) = &c.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = c.seed {
        cfg.params.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stages): (&Common, Vec<Stage>) = match &cli.command {
        Command::Generate(c) => (c, vec![Stage::Generate]),
        Command::Diagonalize(c) => (c, vec![Stage::Diagonalize]),
        Command::Overlaps(c) => (c, vec![Stage::Overlaps]),
        Command::Fit(c) => (c, vec![Stage::Fit]),
        Command::Xstats(c) => (c, vec![Stage::Xstats]),
        Command::Rdm(c) => (c, vec![Stage::Rdm]),
        Command::Predict(c) => (c, vec![Stage::Predict]),
        Command::Report(c) => (c, vec![Stage::Report]),
        Command::Run(c) => (c, Stage::ALL.to_vec()),
    };
    let result = load(common).and_then(|cfg| {
        let opts = RunOptions { workers: common.workers, force: common.force, task_limit: None, include: common.include.clone(), quiet: common.quiet };
        execute(&cfg, &stages, &opts).map(|m| (cfg, m))
    });
    match result {
        Ok((cfg, m)) => {
            if !common.quiet {
                for (name, s) in &m.stages {
                    let note = s.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
                    eprintln!("{name}: {}{note}", if s.completed { "done" } else { "not run" });
                }
                eprintln!("results in {}", cfg.output.dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
