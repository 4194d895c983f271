//! `freezeout`: run trajectories, ensembles, rate sweeps and sector spectra
//! from a JSON config and write CSV/JSON artifacts.
//!
//! Precedence: built-in defaults, then the `--config` document, then flags.
//! Exit codes: 0 success, 2 config error, 3 numerical failure,
//! 4 internal-consistency failure. Failures print an error JSON on stderr and
//! also write it to `error.json` in the output directory when possible.

mod commands;
mod config;
mod emit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{Experiment, Overrides, RunConfig};
use emit::Artifacts;

#[derive(Parser)]
#[command(name = "freezeout", version, about = "Dissipative freezing in Lindblad systems with strong symmetries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `unraveling.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_traj: Option<u64>,
    /// Worker threads for ensembles and sector sweeps.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single trajectory: weights.csv, singulars.csv, freeze_report.json.
    Trajectory(Common),
    /// Ensemble statistics: freeze_hist.csv, destinations.csv, coherence_matrix.csv, summary.json.
    Ensemble(Common),
    /// Mean freeze time against the sector gap over a rate grid.
    SweepGamma(Common),
    /// Sector spectra: spectrum.csv, spectrum.json.
    Spectrum(Common),
    /// Stationary states of each diagonal sector.
    SteadyStates(Common),
    /// Non-freezing pairs from one long trajectory, checked against sector spectra.
    DetectTraceless(Common),
    /// Checks the declared symmetry and lists similar subspaces.
    ValidateModel(Common),
    /// Model families.
    Models {
        #[command(subcommand)]
        action: ModelsAction,
    },
}

#[derive(Subcommand)]
enum ModelsAction {
    /// Print the model families with example recipes.
    List,
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl CliError {
    fn new(code: u8, kind: &str, message: impl Into<String>) -> Self {
        Self { code, kind: kind.into(), message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(2, "config", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(2, "io", format!("{}: {e}", path.display()))
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(3, "numerical", message)
    }

    pub fn consistency(message: impl Into<String>) -> Self {
        Self::new(4, "internal_consistency", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(4, "internal", message)
    }

    fn to_json(&self) -> serde_json::Value {
        json!({"error": {"kind": self.kind, "exit_code": self.code, "message": self.message}})
    }
}

impl From<freezeout::Error> for CliError {
    fn from(e: freezeout::Error) -> Self {
        use freezeout::Error as E;
        let code = match &e {
            E::Dimension(_) | E::Validation(_) | E::DegeneracyResolution(_) | E::Index(_) | E::Argument(_) => 2,
            E::TimestepTooLarge { .. } | E::InvalidJump { .. } | E::StepSize { .. } | E::Numerical(_) => 3,
            E::InternalConsistency(_) => 4,
        };
        Self::new(code, e.kind(), e.to_string())
    }
}

fn run(experiment: Experiment, common: &Common) -> Result<(), (CliError, Option<PathBuf>)> {
    let overrides =
        Overrides { seed: common.seed, out: common.out.clone(), n_traj: common.n_traj, threads: common.threads };
    let fallback_dir = common.out.clone();
    let mut cfg = RunConfig::load(&common.config).map_err(|e| (e, fallback_dir.clone()))?;
    cfg.apply(&overrides, experiment);
    let dir = Some(cfg.out_dir());
    let fail = |e: CliError| (e, dir.clone());
    cfg.validate().map_err(fail)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail(CliError::internal(format!("thread pool: {e}"))))?;
    }
    let mut out = Artifacts::new(&cfg).map_err(fail)?;
    let result = match experiment {
        Experiment::Trajectory => commands::trajectory(&cfg, &mut out),
        Experiment::Ensemble => commands::ensemble(&cfg, &mut out),
        Experiment::SweepGamma => commands::sweep_gamma(&cfg, &mut out),
        Experiment::Spectrum => commands::spectrum(&cfg, &mut out),
        Experiment::SteadyStates => commands::steady(&cfg, &mut out),
        Experiment::DetectTraceless => commands::detect_traceless(&cfg, &mut out),
        Experiment::ValidateModel => commands::validate(&cfg, &mut out),
    };
    for p in out.written() {
        eprintln!("wrote {}", p.display());
    }
    result.map_err(fail)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Trajectory(c) => (Experiment::Trajectory, c),
        Command::Ensemble(c) => (Experiment::Ensemble, c),
        Command::SweepGamma(c) => (Experiment::SweepGamma, c),
        Command::Spectrum(c) => (Experiment::Spectrum, c),
        Command::SteadyStates(c) => (Experiment::SteadyStates, c),
        Command::DetectTraceless(c) => (Experiment::DetectTraceless, c),
        Command::ValidateModel(c) => (Experiment::ValidateModel, c),
        Command::Models { action: ModelsAction::List } => {
            println!("{}", serde_json::to_string_pretty(&commands::models_list()).expect("static json"));
            return ExitCode::SUCCESS;
        }
    };
    match run(experiment, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, dir)) => {
            let body = serde_json::to_string_pretty(&e.to_json()).expect("error json");
            eprintln!("{body}");
            if let Some(d) = dir.filter(|d| d.is_dir()) {
                let _ = std::fs::write(d.join("error.json"), body + "\n");
            }
            ExitCode::from(e.code)
        }
    }
}
