//! `dspect`: spectral analysis of diffusion score fields on linear
//! manifolds — analytic and finite-matrix Jacobian spectra, condensation
//! sweeps, intrinsic-dimension estimation and reverse-SDE diagnostics,
//! emitted as CSV/JSON.

mod commands;
mod config;
mod fmt;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser)]
#[command(name = "dspect", version, about = "Diffusion score-field spectra at desk scale")]
struct Cli {
    /// Output directory (default: $DSPECT_OUT_DIR or the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// JSON file whose fields override the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Validate the configuration and print the resolved plan, then exit.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Cap the worker-thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic and finite-matrix spectra of the Jacobian factor `W_t`.
    Spectrum(commands::spectrum::Args),
    /// Condensation-time sweep over random positions.
    Condense(commands::condense::Args),
    /// Perturbation-SVD intrinsic-dimension estimation sweeps.
    EstimateDim(commands::estimate_dim::Args),
    /// Reverse-SDE integration with trajectory diagnostics.
    Simulate(commands::simulate::Args),
}

pub(crate) enum AppError {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e.0)
    }
}

impl From<anyhow::Error> for AppError {
    fn from(e: anyhow::Error) -> Self {
        AppError::Runtime(e)
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(AppError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            std::process::exit(2);
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(AppError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| AppError::Runtime(anyhow::anyhow!("thread pool: {e}")))?;
    }
    let out_dir = cli
        .out_dir
        .or_else(|| std::env::var_os("DSPECT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = commands::Context {
        out_dir,
        config: cli.config,
        dry_run: cli.dry_run,
    };
    match cli.command {
        Command::Spectrum(args) => commands::spectrum::entry(args, &ctx),
        Command::Condense(args) => commands::condense::entry(args, &ctx),
        Command::EstimateDim(args) => commands::estimate_dim::entry(args, &ctx),
        Command::Simulate(args) => commands::simulate::entry(args, &ctx),
    }
}
