//! `cptraj`: generate synthetic trajectory streams, wrap them in calibrated
//! prediction regions, and report coverage/width metrics.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal invariant violation.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cptraj_core::eval::Method;
use cptraj_core::Error as CoreError;

#[derive(Debug)]
pub struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 1,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 2,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            code: 3,
        }
    }

    /// Core errors raised while validating configuration.
    pub fn from_config_error(e: CoreError) -> Self {
        Self::config(e.to_string())
    }

    /// Core errors raised while running: data problems keep exit code 2,
    /// broken invariants exit 3.
    pub fn from_run_error(e: CoreError) -> Self {
        match e {
            CoreError::StateCorruption(_) | CoreError::ContractViolation(_) => {
                Self::internal(e.to_string())
            }
            CoreError::InvalidInput { .. } => Self::config(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Min-distance score with horizon-wide threshold optimization.
    Cptraj,
    /// Plain per-horizon online update (no optimizer).
    Aci,
    /// Optimized run with the residual score.
    #[value(alias = "cptraj_rs")]
    CptrajRs,
}

impl From<MethodArg> for Method {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::Cptraj => Method::Cptraj,
            MethodArg::Aci => Method::Aci,
            MethodArg::CptrajRs => Method::CptrajRs,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "cptraj",
    version,
    about = "Streaming calibration of sampled forecast trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic regime-switching AR streams as JSON Lines.
    Generate(GenerateArgs),
    /// Run calibration methods over streams, writing per-rate records.
    Calibrate(CalibrateArgs),
    /// Aggregate record files into CSV tables and a JSON summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Stream files (JSON Lines, optionally .gz).
    #[arg(required = true)]
    streams: Vec<PathBuf>,
    /// JSON configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Method to run; repeatable. Overrides the config list.
    #[arg(long = "method", value_enum)]
    methods: Vec<MethodArg>,
    /// Comma-separated miscoverage rates overriding the default ladder.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Maximum concurrent (stream, method) runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Resume from a checkpoint file written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a checkpoint every N processed steps (forces serial runs).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Stop after N steps, writing a checkpoint (forces serial runs).
    #[arg(long)]
    stop_after: Option<u64>,
    /// Verify that the optimized method with a zero interval scale
    /// reproduces the plain mode exactly before calibrating.
    #[arg(long)]
    self_check_reduction: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing *.records.jsonl files.
    records: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap prints its own help/version output through the error.
        let _ = e.print();
        CliError {
            message: String::new(),
            code: if e.use_stderr() { 1 } else { 0 },
        }
    })?;

    match cli.command {
        Command::Generate(args) => {
            let config =
                config::FileConfig::load(args.config.as_deref())?.resolve(args.seed, &[], None)?;
            commands::generate(&config, &args.out)
        }
        Command::Calibrate(args) => {
            let methods: Vec<Method> = args.methods.iter().map(|&m| m.into()).collect();
            let config = config::FileConfig::load(args.config.as_deref())?.resolve(
                args.seed,
                &methods,
                args.rates.as_deref(),
            )?;
            let options = commands::CalibrateOptions {
                parallel: args.parallel,
                resume: args.resume,
                checkpoint_every: args.checkpoint_every,
                stop_after: args.stop_after,
                self_check_reduction: args.self_check_reduction,
            };
            commands::calibrate(&config, &args.streams, &args.out, &options)
        }
        Command::Report(args) => commands::report(&args.records, &args.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message.is_empty() {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.code)
        }
    }
}
