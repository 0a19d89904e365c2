//! Command-line front end: argument parsing, configuration precedence,
//! run directories and manifests.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{FileConfig, ModelRun, SimSettings};

/// Exit code for fatal input or configuration errors.
pub const EXIT_FATAL: u8 = 2;
/// Exit code when a run completed with convergence warnings.
pub const EXIT_WARNINGS: u8 = 3;
/// R-hat above this value triggers a convergence warning.
pub const RHAT_WARNING: f64 = 1.05;

#[derive(Debug, Parser)]
#[command(name = "pollerr", version, about = "Estimate directional polling error and excess variance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a poll file and a results file into a dataset.
    Ingest(IngestArgs),
    /// Fit one model at one inclusion window.
    Fit(FitArgs),
    /// Fit models over a grid of inclusion windows.
    Sweep(FitArgs),
    /// Generate a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Re-run a previous run from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Parent directory for a new timestamped run directory.
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Exact run directory to create (must not exist).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Worker threads for chains and sweep cells (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub polls: PathBuf,
    #[arg(long)]
    pub results: PathBuf,
    /// TOML file naming the source column for each field.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset file written by `ingest` or `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// static, linear, rw, or all.
    #[arg(long, alias = "models")]
    pub model: Option<String>,
    /// Inclusion window in days before the election.
    #[arg(long)]
    pub window: Option<u32>,
    /// Window grid as start:end:step.
    #[arg(long)]
    pub grid: Option<String>,
    /// Per-model window overrides, e.g. "M2=20,M3=50".
    #[arg(long = "per-model-T")]
    pub per_model_t: Option<String>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the observed share in the binomial variance term.
    #[arg(long)]
    pub plug_in_likelihood: bool,
    /// Keep only contests from this year.
    #[arg(long)]
    pub year: Option<i32>,
    /// Pin parameters, e.g. "tau=0.02" (repeatable or comma-separated).
    #[arg(long)]
    pub fix: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub contests: Option<usize>,
    /// Polls per contest, spread evenly over the window.
    #[arg(long)]
    pub polls: Option<usize>,
    #[arg(long)]
    pub max_day: Option<u32>,
    /// Sample size of every poll.
    #[arg(long)]
    pub sample_size: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_mean: Option<f64>,
    #[arg(long)]
    pub alpha_sd: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// random_walk, static, linear_drift or regime_shift.
    #[arg(long)]
    pub dynamics: Option<String>,
    /// Daily logit drift for linear_drift.
    #[arg(long, allow_hyphen_values = true)]
    pub slope: Option<f64>,
    /// First day (counting back) of the shifted regime.
    #[arg(long)]
    pub shift_day: Option<u32>,
    #[arg(long, allow_hyphen_values = true)]
    pub jump: Option<f64>,
    #[arg(long)]
    pub v_min: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// An input file and its digest at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Records an input by absolute path so a replay works from any directory.
pub(crate) fn digest(role: &str, path: &Path) -> Result<InputDigest> {
    let path = std::fs::canonicalize(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {role} file {}: {e}", path.display())))?;
    Ok(InputDigest {
        role: role.to_string(),
        sha256: sha256_file(&path)?,
        path,
    })
}

/// Creates the run directory. An explicit `run_dir` must not exist; the
/// generated name gets a numeric suffix instead of reusing a directory.
pub fn create_run_dir(output: &OutputArgs, subcommand: &str, seed: u64) -> Result<PathBuf> {
    if let Some(dir) = &output.run_dir {
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::create_dir(dir).map_err(|e| {
            Error::InvalidConfig(format!("cannot create run directory {}: {e}", dir.display()))
        })?;
        return Ok(dir.clone());
    }
    std::fs::create_dir_all(&output.out_dir)?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let base = format!("{subcommand}-{stamp}-s{seed}");
    for k in 1.. {
        let name = if k == 1 { base.clone() } else { format!("{base}-{k}") };
        let dir = output.out_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

pub(crate) fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let file = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(file, manifest)?;
    Ok(())
}

pub(crate) fn manifest(subcommand: &str, config: &impl Serialize, inputs: Vec<InputDigest>) -> Result<RunManifest> {
    Ok(RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: subcommand.to_string(),
        config: serde_json::to_value(config)?,
        inputs,
    })
}

/// Outcome of a completed command.
pub enum Completion {
    Clean,
    Warnings(Vec<String>),
}

pub fn run(cli: Cli) -> Result<Completion> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Replay(a) => commands::replay(&a),
    }
}

/// Parses arguments, runs, reports and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Completion::Clean) => ExitCode::SUCCESS,
        Ok(Completion::Warnings(w)) => {
            for line in w {
                eprintln!("warning: {line}");
            }
            ExitCode::from(EXIT_WARNINGS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
