//! Command-line front end: `kelly`, `exponent`, `evolve`, `simulate`, and
//! `check` for validating emitted files.

pub mod commands;
pub mod config;
pub mod schema;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::error::{Error, Result};
pub use commands::{cmd_evolve, cmd_exponent, cmd_kelly, cmd_simulate, ErrorRecord, Outcome};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "WEALTHLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "wealthlab",
    version,
    about = "Betting dynamics, wealth densities and agent simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Growth-rate curve, Kelly fraction and ruin threshold.
    Kelly(RunArgs),
    /// Characteristic roots and tail exponent over a parameter sweep.
    Exponent(RunArgs),
    /// Iterates the wealth-density operator and fits the tail.
    Evolve(RunArgs),
    /// Agent-based simulation with elite turnover and ruin statistics.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checks every recognised output file in a directory.
    Check {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces a top-level scalar of the config, e.g. `--set kappa=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        self.set.iter().map(|s| config::parse_override(s)).collect()
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Kelly(a) => {
            cmd_kelly(&config::load(&a.config, &a.overrides()?)?, &a.out).map(|r| r.1)
        }
        Command::Exponent(a) => {
            cmd_exponent(&config::load(&a.config, &a.overrides()?)?, &a.out).map(|r| r.1)
        }
        Command::Evolve(a) => {
            cmd_evolve(&config::load(&a.config, &a.overrides()?)?, &a.out).map(|r| r.1)
        }
        Command::Simulate { run, seed } => {
            let mut overrides = run.overrides()?;
            if let Some(s) = seed {
                overrides.push(("seed".into(), Value::from(*s)));
            }
            cmd_simulate(&config::load(&run.config, &overrides)?, &run.out).map(|r| r.1)
        }
        Command::Check { out } => Ok(Outcome {
            files: schema::check_dir(out)?,
            failures: 0,
        }),
    }
}

/// One-line JSON error record for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": ErrorRecord::from(e) }).to_string()
}
