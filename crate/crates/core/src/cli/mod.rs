//! Experiment runner behind the `structint` binary.
//!
//! Exit codes: `0` success, `1` i/o error, `2` configuration error (nothing
//! written), `3` solver failure (completed part flushed with a marker row).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{convergence, reduce_and_run, run, Artifacts, CliError};
pub use config::{ConfigError, ProblemSpec, ReductionConfig, RunConfig};

/// Output directory used when neither `--out` nor `out` is given.
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "structint",
    version,
    about = "Energy-consistent time integration experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate once and audit the energy identity.
    Run(CommonArgs),
    /// Final-time errors and observed orders over `N_list`.
    Convergence(CommonArgs),
    /// Full, structured reduced and non-structured reduced runs.
    Reduce(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Self::Run(a) | Self::Convergence(a) | Self::Reduce(a) => a,
        }
    }
}

/// Runs `command` and writes its files; returns the written paths.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>, CliError> {
    let args = command.args();
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let artifacts = match command {
        Command::Run(_) => run(&cfg)?,
        Command::Convergence(_) => convergence(&cfg)?,
        Command::Reduce(_) => reduce_and_run(&cfg)?,
    };
    artifacts.write(&out)
}

/// Parses `args` (including the program name) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("structint: {e}");
            e.exit_code()
        }
    }
}
