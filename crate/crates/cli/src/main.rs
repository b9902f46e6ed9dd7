//! Command-line frontend for the factor-augmented learning pipeline.
//!
//! Six subcommands cover the workflow: `synth` generates datasets, `factors`
//! inspects covariance spectra and saves factor models, `screen` ranks
//! residual columns, `run` evaluates the configured pipeline jobs,
//! `backtest` turns score files into a long-short ledger, and `event-study`
//! fits around-event return profiles. All but `synth` read a single TOML
//! configuration file; its SHA-256 is stamped into every output.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "farmaug",
    version,
    about = "Factor-augmented feature learning: factor diagnostics, screening, \
             rolling evaluation, synthetic data, event studies, and backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report covariance spectra and save fitted factor models.
    Factors(RunArgs),
    /// Run every configured pipeline job and write metrics JSON.
    Run(RunArgs),
    /// Turn score/return/cap files into a daily long-short ledger.
    Backtest(RunArgs),
    /// Fit the around-event return profile with two-way fixed effects.
    #[command(name = "event-study")]
    EventStudy(RunArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Rank residual columns by marginal predictive strength.
    Screen(RunArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed recorded in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all machine cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (overrides `out_dir` from the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate the configuration and inputs, then exit without computing.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Dataset kind: factor-regression, interaction-signal,
    /// screening-sparse, event-panel, or portfolio-fixture.
    pub kind: String,
    /// Rows (assets for event-panel); kind-specific default.
    #[arg(long)]
    pub n: Option<usize>,
    /// Columns (days for event-panel); kind-specific default.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted for interface symmetry; generation is single-threaded.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory for the generated files.
    #[arg(long)]
    pub out: PathBuf,
    /// Print what would be generated without writing files.
    #[arg(long)]
    pub dry_run: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Factors(a) => commands::cmd_factors(&a),
        Command::Run(a) => commands::cmd_run(&a),
        Command::Backtest(a) => commands::cmd_backtest(&a),
        Command::EventStudy(a) => commands::cmd_event_study(&a),
        Command::Synth(a) => commands::cmd_synth(&a),
        Command::Screen(a) => commands::cmd_screen(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
