//! Command-line front end: instance parsing, solver orchestration and
//! report emission.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod instance;
pub mod report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GAP_OPEN: i32 = 4;
pub const EXIT_VIOLATED: i32 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<pseudo_mot::Error> for CliError {
    fn from(e: pseudo_mot::Error) -> Self {
        if e.is_numerical() {
            CliError::numerical(e.to_string())
        } else {
            CliError::validation(e.to_string())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Parser)]
#[command(name = "pmot", version, about = "Martingale transport in pseudo-Euclidean spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form Gaussian solution for S and Sigma.
    Gaussian(Common),
    /// Solve a discrete instance and certify the result.
    Solve(Common),
    /// Certify a given plan against a given monotone set.
    Certify(Common),
    /// Evaluate psi, phi and projections at probe points (CSV output).
    Fitz(FitzArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tolerance override, e.g. `--tol gap=1e-7`.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    pub tol: Vec<String>,
    /// Forward-check epsilon.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_clusters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitzArgs {
    #[command(flatten)]
    pub common: Common,
    /// CSV of probe points, one per row, with a header row.
    #[arg(long, conflicts_with = "grid")]
    pub probes: Option<PathBuf>,
    /// Product grid `LO:HI:N` applied to every axis.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Also write level sets `S(y - z, y - z) = phi(y)` to this CSV (d = 2).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Samples per level-set branch.
    #[arg(long, default_value_t = 101)]
    pub trace_samples: usize,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Gaussian(c) => commands::gaussian(c),
        Command::Solve(c) => commands::solve(c),
        Command::Certify(c) => commands::certify(c),
        Command::Fitz(a) => commands::fitz(a),
    }
}
