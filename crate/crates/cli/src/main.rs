//! `llsvn` command-line tool.
//!
//! Settings are resolved in three layers: built-in defaults, then the `--config` TOML file,
//! then command-line flags. `LLSVN_THREADS` supplies the thread count when `--threads` is absent.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug, Parser)]
#[command(name = "llsvn", version, about = "Validated lead-lag networks of trader groups across timescales")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic market with planted groups and couplings.
    Synth(SynthArgs),
    /// Export the trader-by-slice state matrix at one timescale.
    States(SliceArgs),
    /// Build the grouping network at one timescale.
    Svn(SliceArgs),
    /// Detect trader groups at one timescale.
    Groups(SliceArgs),
    /// Build the lead-lag network between two timescales.
    Leadlag(LeadLagArgs),
    /// Run the rolling-window sweep over the timescale grid.
    Sweep(SweepArgs),
    /// Compute asymmetry statistics of a finished sweep.
    Asym(AsymArgs),
    /// Summarise a finished sweep per timescale.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "LLSVN_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct Analysis {
    /// Trade CSV.
    #[arg(long)]
    input: PathBuf,
    /// First day of the analysed range.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last day of the analysed range (inclusive).
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    rho0: Option<f64>,
    /// False discovery rate of every validation step.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    min_active_slices: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_restarts: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Trade CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Ground truth JSON to write.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    traders: Option<usize>,
}

#[derive(Debug, Args)]
struct SliceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    analysis: Analysis,
    /// Slice duration in seconds.
    #[arg(long)]
    dt: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LeadLagArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    analysis: Analysis,
    /// Leading timescale in seconds.
    #[arg(long)]
    dt1: u32,
    /// Lagging timescale in seconds.
    #[arg(long)]
    dt2: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    analysis: Analysis,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    t_in_days: Option<usize>,
    #[arg(long)]
    window_step_days: Option<usize>,
    #[arg(long)]
    grid_min: Option<u32>,
    #[arg(long)]
    grid_max: Option<u32>,
    #[arg(long)]
    grid_step: Option<u32>,
    /// Explicit timescales, comma separated; replaces the min/max/step grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u32>>,
}

#[derive(Debug, Args)]
struct AsymArgs {
    #[command(flatten)]
    common: Common,
    /// Sweep directory.
    #[arg(long)]
    sweep: PathBuf,
    /// One of `links`, `rho_n`, `links_level`, `rho_n_level`.
    #[arg(long)]
    metric: String,
    #[arg(long)]
    out: PathBuf,
    /// `ar1` or `newey_west`.
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    n_min: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Sweep directory.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<config::UsageError>()) {
        return 2;
    }
    match err.chain().find_map(|e| e.downcast_ref::<llsvn::Error>()) {
        Some(e) => core_code(e),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 3,
        None => 4,
    }
}

fn core_code(e: &llsvn::Error) -> u8 {
    use llsvn::Error::*;
    match e {
        Config(_) => 2,
        Parse { .. } | InvalidInput(_) | IncompleteSweep(_) | Io(_) | Csv(_) | Json(_) => 3,
        Task { source, .. } => core_code(source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
