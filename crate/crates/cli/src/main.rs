//! `daeref`: command-line front end for descriptor-system control refinement.

mod commands;
mod schema;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use dae_refine::certificates::default_lambda_grid;
use dae_refine::RankTolerance;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] dae_refine::Error),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn name(&self) -> &'static str {
        match self {
            CliError::Domain(e) => e.name(),
            CliError::Schema(_) => "SchemaError",
            CliError::Io(_) => "IoFailure",
            CliError::Usage(_) => "UsageError",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "daeref",
    version,
    about = "Control refinement for discrete-time descriptor systems"
)]
pub struct Cli {
    /// Relative rank tolerance (default: 1e-10·max(rows, cols)).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Comma-separated contraction rates tried by the certificate search.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Dv,
    Dae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Approx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    File,
    Random,
    Gain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Kron,
    Rq,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report regularity, index and reachability of a DAE.
    Check {
        /// System file (JSON).
        system: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert between DAE and driving-variable form.
    Convert {
        /// System file (JSON).
        system: PathBuf,
        /// Target form.
        #[arg(long, value_enum)]
        to: Target,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a simulation-function certificate between two systems.
    Certify {
        /// Concrete system.
        #[arg(long)]
        concrete: PathBuf,
        /// Abstract system.
        #[arg(long = "abstract")]
        abstract_sys: PathBuf,
        /// Sylvester solver.
        #[arg(long, value_enum, default_value = "kron")]
        method: Method,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stabilize and reduce a system by balanced truncation.
    Reduce {
        /// System file (JSON).
        system: PathBuf,
        /// Order of the reduced system.
        #[arg(long)]
        order: usize,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine an abstract controller to the concrete system.
    Refine(RefineArgs),
    /// Simulate an open-loop system or a plant with a refined controller.
    Simulate(SimulateArgs),
    /// Abstraction pipeline: convert, stabilize, reduce and certify.
    Pipeline {
        /// Concrete system.
        #[arg(long)]
        concrete: PathBuf,
        /// Order of the reduced system.
        #[arg(long)]
        order: usize,
        /// Sylvester solver.
        #[arg(long, value_enum, default_value = "kron")]
        method: Method,
        /// Concrete initial state for the ε report.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Bound on the abstract driving input for the ε report.
        #[arg(long)]
        v_max: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Concrete system.
    #[arg(long)]
    pub concrete: PathBuf,
    /// Abstract system (DAE, or DV for approximate mode).
    #[arg(long = "abstract")]
    pub abstract_sys: PathBuf,
    /// Abstract controller.
    #[arg(long)]
    pub controller: PathBuf,
    /// Exact or approximate refinement.
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Exact mode: relation file (`H` or a full interface). Defaults to `x = x_a`.
    #[arg(long)]
    pub relation: Option<PathBuf>,
    /// Exact mode: use a stabilizing gain for the interface.
    #[arg(long)]
    pub stabilize: bool,
    /// Approximate mode: certificate file.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Concrete initial state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Approximate mode: horizon over which v_max is measured.
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plant (DAE or DV).
    #[arg(long)]
    pub system: PathBuf,
    /// Refined controller closing the loop.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Number of steps.
    #[arg(long, default_value_t = 100)]
    pub horizon: usize,
    /// Seed for the random input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Open-loop driving input source.
    #[arg(long, value_enum, default_value = "random")]
    pub input: InputKind,
    /// CSV file with one driving-input sample per row (`--input file`).
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Row-major state gain `s = G x` (`--input gain`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gain: Option<Vec<f64>>,
    /// Half-width of the uniform random input (`--input random`).
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    /// Initial state (defaults to the first state in the system file, else zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Initial abstract state for coupled controllers.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_a0: Option<Vec<f64>>,
    /// Trace CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Numeric settings shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Settings {
    pub tol: RankTolerance,
    pub lambda_grid: Vec<f64>,
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let tol = match cli.tol {
        Some(t) if t.is_finite() && t > 0.0 => RankTolerance::fixed(t),
        Some(t) => return Err(CliError::Usage(format!("--tol must be positive, got {t}"))),
        None => RankTolerance::default(),
    };
    let lambda_grid = match &cli.lambda_grid {
        Some(g) if !g.is_empty() && g.iter().all(|l| *l > 0.0 && *l < 1.0) => g.clone(),
        Some(_) => return Err(CliError::Usage("--lambda-grid entries must lie in (0, 1)".into())),
        None => default_lambda_grid(),
    };
    Ok(Settings { tol, lambda_grid })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = settings(&cli)?;
    commands::dispatch(cli.command, &s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            let _ = Cli::command()
                .error(clap::error::ErrorKind::ValueValidation, msg)
                .print();
            ExitCode::from(2)
        }
        Err(e) => {
            let body = serde_json::json!({ "error": e.name(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}
