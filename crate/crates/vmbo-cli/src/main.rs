//! Command-line entry point. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 infeasible constraints, 1 internal failure.

// `!(x >= 0.0)`-style comparisons are deliberate NaN rejections.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Config, Overrides};
use experiment::SolveArgs;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<vmbo::Error> for CliError {
    fn from(e: vmbo::Error) -> Self {
        use vmbo::Error;
        match e {
            Error::Infeasible(msg) => CliError::Infeasible(msg),
            Error::Io { .. }
            | Error::Format { .. }
            | Error::FormatLine { .. }
            | Error::Disconnected { .. } => CliError::Data(e.to_string()),
            Error::Parameter(_) | Error::Shape(_) => CliError::Config(e.to_string()),
            Error::EigenNonConvergence { .. } | Error::Internal(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "vmbo",
    version,
    about = "Volume-constrained MBO clustering on similarity graphs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (trial t runs with seed + t).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for result files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    labels_per_class: Option<usize>,
    /// Kernel kind (overrides kernel.kind).
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// Diffusion time (overrides kernel.h).
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Noise scale of the score perturbation; 0 disables.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Constraint mode: exact or interval.
    #[arg(long, global = true)]
    constraints: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full experiment pipeline and report accuracies.
    Run,
    /// Solve one thresholding problem from a scores file.
    Solve {
        /// Text file: `N P` header, then N rows of P scores.
        scores: PathBuf,
        /// Exact volumes, comma-separated.
        #[arg(long)]
        volumes: Option<String>,
        /// Interval lower bounds, comma-separated.
        #[arg(long)]
        lower: Option<String>,
        /// Interval upper bounds, comma-separated.
        #[arg(long)]
        upper: Option<String>,
        /// Initial price vector, comma-separated; defaults to 1/P.
        #[arg(long)]
        m0: Option<String>,
    },
    /// Sweep the time step and report solver workload per iteration.
    Probe,
    /// Write the smallest graph eigenvalues for the configured dataset.
    Spectrum,
    /// Generate the synthetic three-moons sample to files.
    GenMoons,
}

fn real_main(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        labels_per_class: cli.labels_per_class,
        kernel: cli.kernel.clone(),
        h: cli.h,
        temperature: cli.temperature,
        constraints: cli.constraints.clone(),
    };
    let cfg = Config::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.as_deref();
    match cli.cmd {
        Cmd::Run => {
            let summary = experiment::run_experiment(&cfg, out)?;
            experiment::print_run_summary(&summary);
            Ok(())
        }
        Cmd::Solve {
            scores,
            volumes,
            lower,
            upper,
            m0,
        } => experiment::solve_file(
            &SolveArgs {
                scores,
                volumes,
                lower,
                upper,
                m0,
            },
            out,
        ),
        Cmd::Probe => experiment::probe_scaling(&cfg, out).map(|_| ()),
        Cmd::Spectrum => experiment::spectrum_report(&cfg, out),
        Cmd::GenMoons => experiment::gen_moons(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
