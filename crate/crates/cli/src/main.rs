//! `koopdyn`: run DMD, sparse profile decompositions, eigenfunction checks and
//! feedback-linearization experiments from a config file.
//!
//! Exit status is 0 on success, 2 for invalid configs or inputs, 3 when a
//! numerical routine fails, and 1 when a file cannot be read or written.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Inputs};
use crate::config::{ExperimentConfig, ValidationError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Core(#[from] koopdyn_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(koopdyn_core::Error::Io(_)) | CliError::Io { .. } => 1,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "koopdyn", version, about = "Koopman / DMD / sparse profile decomposition experiments")]
struct Cli {
    /// Experiment config (TOML, `version = 1`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured trajectory as CSV.
    Simulate,
    /// Dynamic mode decomposition of a trajectory CSV.
    Dmd { trajectory: PathBuf },
    /// Sparse profile decomposition of a trajectory CSV.
    Sparse { trajectory: PathBuf },
    /// Eigenfunctions and eigenfunctionals from a sparse decomposition.
    Kef { decomposition: PathBuf, trajectory: PathBuf },
    /// Closed-loop feedback linearization of the cubic system.
    Control,
    /// Compare a DMD error CSV against a sparse error CSV.
    Compare { dmd_error: PathBuf, sparse_error: PathBuf },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut inputs = Inputs::default();
    let config = match &cli.config {
        Some(path) => {
            let bytes = inputs.read(path)?;
            let src = String::from_utf8(bytes).map_err(|_| ValidationError {
                line: None,
                message: format!("{} is not UTF-8", path.display()),
            })?;
            let mut cfg = ExperimentConfig::parse(&src)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            Some(cfg)
        }
        None => None,
    };
    let out = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.output.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    Ok(Context { config, out, inputs })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli)?;
    match &cli.command {
        Command::Simulate => commands::simulate(ctx),
        Command::Dmd { trajectory } => commands::run_dmd(ctx, trajectory),
        Command::Sparse { trajectory } => commands::run_sparse(ctx, trajectory),
        Command::Kef { decomposition, trajectory } => commands::run_kef(ctx, decomposition, trajectory),
        Command::Control => commands::run_control(ctx),
        Command::Compare { dmd_error, sparse_error } => commands::run_compare(ctx, dmd_error, sparse_error),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("koopdyn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
