//! `t1` — reproducible experiment runner for the adaptive lifetime
//! estimation toolkit. One subcommand per experiment; every output file
//! carries the hash of the fully resolved configuration, and (config,
//! seed) determines the outputs byte for byte.

mod cmds;
mod config;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or I/O problem (exit code 2).
    Config(String),
    /// Numerical failure during a run (exit code 3).
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "t1", about = "Adaptive qubit-lifetime estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Named parameter preset; overrides the config file's preset.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Repeated adaptive estimation against the simulator; writes shot,
    /// trace, and moving-mean files.
    Track,
    /// Shot-interleaved adaptive and linear-sweep estimation with an
    /// agreement statistic.
    Interleave,
    /// Error metrics of the adaptive estimator vs fixed-wait baselines
    /// over a lifetime grid.
    Compare,
    /// Adaptive-estimator error under readout-model mismatch.
    SpamSweep,
    /// KL divergence of the moment-matched approximants over a parameter
    /// grid.
    KlScan,
    /// Optimal waiting-time prefactor table and closed-form reference
    /// points.
    OptTau,
    /// PSD, Allan deviation, and noise-model fit of a lifetime trace.
    Analyze,
    /// Discrete lifetime-switch detection with binomial verification.
    Detect,
    /// Interleaved weak/strong binomial validation of the adaptive
    /// estimates.
    Validate,
    /// Posterior uncertainty against the binomial-statistics limit.
    FreqLimit,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config FILE is required".into()))?;
    let out_dir = cli.out.ok_or_else(|| CliError::Config("--out DIR is required".into()))?;
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let file: config::FileConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let resolved = config::resolve(file, cli.seed, cli.preset)?;

    std::fs::create_dir_all(&out_dir)?;
    let out = output::OutputDir::new(&out_dir, &resolved)?;

    match cli.command {
        Command::Track => cmds::cmd_track(&resolved, &out),
        Command::Interleave => cmds::cmd_interleave(&resolved, &out),
        Command::Compare => cmds::cmd_compare(&resolved, &out),
        Command::SpamSweep => cmds::cmd_spam_sweep(&resolved, &out),
        Command::KlScan => cmds::cmd_kl_scan(&resolved, &out),
        Command::OptTau => cmds::cmd_opt_tau(&resolved, &out),
        Command::Analyze => cmds::cmd_analyze(&resolved, &out),
        Command::Detect => cmds::cmd_detect(&resolved, &out),
        Command::Validate => cmds::cmd_validate(&resolved, &out),
        Command::FreqLimit => cmds::cmd_freq_limit(&resolved, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("t1: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Numerical(_)) => {
            eprintln!("t1: {e}");
            ExitCode::from(3)
        }
    }
}
