//! Command-line entry point: `train`, `eval`, `align`, `sweep`, `inspect`
//! and `gen-dataset`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4
//! architecture mismatch, 5 numeric failure, 1 anything else.

pub mod commands;
pub mod config;

pub use config::{AlignConfig, EvalConfig, PrecisionMode, RunConfig, ScheduleConfig};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::env::EnvError;
use crate::eval::EvalError;
use crate::nn::{CheckpointError, ModelError};
use crate::ppo::{Profile, TrainError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ARCHITECTURE: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Architecture(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Architecture(_) => EXIT_ARCHITECTURE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Other(_) => 1,
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::ArchitectureMismatch { .. } => CliError::Architecture(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::EpisodeDone => CliError::Other(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            TrainError::Env(e) => e.into(),
            TrainError::Environment { .. } => CliError::Other(e.to_string()),
            TrainError::Model(e) => e.into(),
            TrainError::Tensor(e) => CliError::Other(e.to_string()),
            TrainError::Checkpoint(e) => e.into(),
            TrainError::Io(e) => e.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) | EvalError::Range(_) | EvalError::Site { .. } => CliError::Config(e.to_string()),
            EvalError::Data(_) | EvalError::MissingCheckpoint(_) => CliError::Data(e.to_string()),
            EvalError::Env(e) => e.into(),
            EvalError::Model(e) => e.into(),
            EvalError::Tensor(e) => CliError::Other(e.to_string()),
            EvalError::Checkpoint(e) => e.into(),
            EvalError::Io(e) => e.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "foragelab", version, about = "Train, evaluate and inspect visuomotor foraging agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every workflow command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration (may `inherits` from another file).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "FORAGELAB_SEED")]
    pub seed: Option<u64>,
    /// Output root; each run writes to `<out>/<run-id>/`.
    #[arg(long, env = "FORAGELAB_OUT")]
    pub out: Option<PathBuf>,
    /// Run directory name (defaults to `<command>-s<seed>-<unix time>`).
    #[arg(long)]
    pub run_id: Option<String>,
    /// Render at 43x78 instead of 86x155.
    #[arg(long)]
    pub small: bool,
    /// Worker threads; more than one leaves deterministic mode.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Success rates on the clean condition and a perturbation battery.
    Eval(EvalArgs),
    /// Ridge readout and RDM comparison against an alignment dataset.
    Align(AlignArgs),
    /// Alignment and behavior across a series of checkpoints.
    Sweep(SweepArgs),
    /// Print the per-layer parameter table of a checkpoint.
    Inspect(InspectArgs),
    /// Model utilities.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Render stimuli and record surrogate responses.
    GenDataset(GenDatasetArgs),
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Same as the top-level `inspect`.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// track1_phase1, track1_phase2 or track2.
    #[arg(long)]
    pub profile: Option<Profile>,
    /// Checkpoint to resume from (the phase-1 checkpoint for track1_phase2).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total environment steps; with `--two-phase`, split 4:1.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Train without observation normalization.
    #[arg(long)]
    pub no_norm: bool,
    /// Run phase 1, pick the best checkpoint, then graft the GLU and run phase 2.
    #[arg(long)]
    pub two_phase: bool,
    /// Print a line per summary row.
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint path, or one of `oracle`, `visual-oracle`, `random`.
    #[arg(long)]
    pub checkpoint: String,
    /// Battery name (clean, photometric, desk) or a comma list such as `fog:1,brightness:0.3`.
    #[arg(long)]
    pub battery: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// post-encoder or post-GLU.
    #[arg(long)]
    pub site: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Glob matching the checkpoints, e.g. `out/run/checkpoints/*.ckpt`.
    #[arg(long)]
    pub checkpoints: String,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub battery: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub site: Option<String>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub stimuli: Option<usize>,
    /// Surrogate recording sites.
    #[arg(long)]
    pub sites: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
