//! Library side of the `meanfield` binary: config schema and the three
//! commands, each returning the process exit code.
//!
//! Exit codes: 0 success or criterion pass, 1 criterion fail, 2 invalid
//! config, 3 numerical failure, 4 output I/O failure.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CRITERION_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MEANFIELD_THREADS";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<meanfield::Error> for CliError {
    fn from(e: meanfield::Error) -> Self {
        use meanfield::Error as E;
        match e {
            E::BlowUp { time } => CliError::Numeric(format!("blow-up at t = {time}")),
            E::Io(_) | E::Csv(_) | E::Json(_) => CliError::Io(e.to_string()),
            E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::SizeMismatch { .. } | E::TooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "meanfield", version, about = "Mean-field particle simulations and Lyapunov stability checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the particle system and write trajectory summaries.
    Simulate(RunArgs),
    /// Monte Carlo stability probe around the equilibrium cloud.
    Probe(RunArgs),
    /// Quadratic-form stability test for linear-kind systems.
    Criterion(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding `simulation.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Caps the global rayon pool from [`THREADS_ENV`] if it is set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot set thread count: {e}")))
}

/// Runs one parsed command and returns the exit code, printing errors to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Probe(args) => commands::probe(args),
        Command::Criterion(args) => commands::criterion(args),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
