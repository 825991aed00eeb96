//! `erasure-regret`: evaluate, optimize and simulate rate adaptation over a
//! binary erasure channel. Output is CSV (default) or JSON.
//!
//! Exit codes: 0 success, 64 usage error, 2 I/O error, 3 solver failure.

mod commands;
mod output;
mod params;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{SimStrategy, SweepKind};
use params::Params;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Solver(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<erasure_regret::Error> for CliError {
    fn from(e: erasure_regret::Error) -> Self {
        use erasure_regret::Error as E;
        match e {
            E::Domain(msg) => CliError::Usage(msg),
            E::NoSignChange { .. } | E::NoConvergence { .. } | E::NoSolution(_) | E::BoundOrdering { .. } => {
                CliError::Solver(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "erasure-regret",
    version,
    about = "Throughput and regret of rate adaptation over an erasure channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON file with default parameter values; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
}

#[derive(Subcommand)]
enum Command {
    /// Block-error bounds over a rate grid (--delta, --n, --grid)
    Bounds,
    /// Every throughput figure for one Estimate-then-Transmit run
    /// (--delta, --T, --Te, and one of --backoff/--eeff)
    EttEval,
    /// Parameter sweeps with fitted slopes
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
    },
    /// Exact and closed-form throughput of a windowing schedule, plus an
    /// optional simulation when --trials is given
    Window {
        /// Emit one row per block instead of the summary row
        #[arg(long)]
        per_block: bool,
    },
    /// Monte Carlo estimate compared against the exact evaluator
    Simulate {
        #[arg(long, value_enum)]
        strategy: SimStrategy,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let params = match &cli.config {
        Some(path) => cli.params.or(Params::load(path)?),
        None => cli.params,
    };
    let bytes = match cli.command {
        Command::Bounds => commands::bounds(&params)?,
        Command::EttEval => commands::ett_eval(&params)?,
        Command::Sweep { kind } => commands::sweep(&params, kind)?,
        Command::Window { per_block } => commands::window(&params, per_block)?,
        Command::Simulate { strategy } => commands::simulate(&params, strategy)?,
    };
    output::emit(&bytes, params.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("erasure-regret: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
