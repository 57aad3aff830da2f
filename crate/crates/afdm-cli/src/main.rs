//! `afdm` command-line runner.

mod commands;
mod output;
mod sanity;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration; nothing is written.
    Config(String),
    /// The run itself failed.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "afdm", version, about = "MIMO-AFDM simulation experiments")]
pub struct Cli {
    /// Experiment or plan configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV results and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BER sweep over the configured SNR grid.
    Ber {
        /// Instead of the configured threshold, sweep these multiples of N0 at every SNR.
        #[arg(long, value_delimiter = ',')]
        zeta_sweep: Vec<f64>,
    },
    /// BER sweep followed by a high-SNR slope fit.
    Diversity {
        /// BER window `lo,hi` of the points used in the fit.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-5, 1e-2])]
        ber_window: Vec<f64>,
    },
    /// Channel-estimation NMSE over the configured SNR grid.
    Nmse,
    /// Pilot and guard overhead of MIMO-AFDM and MIMO-OTFS.
    Overhead(OverheadArgs),
    /// Multi-user resource plan with slot-occupancy validation.
    AfdmaPlan,
    /// Precomputed transform-factor table.
    Factors(ParamArgs),
    /// Fast invariant suite.
    Sanity {
        /// Rotate one factor-table diagonal before checking, to exercise failure reporting.
        #[arg(long, hide = true)]
        corrupt_table: bool,
    },
}

/// AFDM parameters given on the command line; `--config` takes precedence.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub l_max: usize,
    #[arg(long, default_value_t = 2)]
    pub alpha_max: usize,
    #[arg(long, default_value_t = 0)]
    pub k_nu: usize,
    #[arg(long)]
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OverheadArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Spacing factors to tabulate; overrides `--k-nu`.
    #[arg(long, value_delimiter = ',')]
    pub k_nu_sweep: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub n_t: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Ber { zeta_sweep } => commands::ber(cli, zeta_sweep),
        Command::Diversity { ber_window } => match ber_window[..] {
            [lo, hi] => commands::diversity(cli, (lo, hi)),
            _ => Err(CliError::Config("--ber-window takes two values lo,hi".into())),
        },
        Command::Nmse => commands::nmse(cli),
        Command::Overhead(args) => commands::overhead(cli, args),
        Command::AfdmaPlan => commands::afdma_plan(cli),
        Command::Factors(args) => commands::factors(cli, args),
        Command::Sanity { corrupt_table } => sanity::run(cli.seed.unwrap_or(1), *corrupt_table),
    }
}
