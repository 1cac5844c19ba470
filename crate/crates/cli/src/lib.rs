//! The `pedaltrack` command line tool.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use pedaltrack_core::Error;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "pedaltrack",
    version,
    about = "Inertial-only bike tracking toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; every component seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Mixed rides with turns and short coasts.
    Free,
    /// Slow, moderate and fast paced rides in rotation.
    Pace,
    /// Fast rides with the freewheel anomaly.
    Fast,
    /// Pedals still throughout.
    Coast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(name = "dr")]
    Dr,
    #[value(name = "model")]
    Model,
    #[value(name = "model+pws-equal")]
    ModelPwsEqual,
    #[value(name = "model+pws-ivw")]
    ModelPwsIvw,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one ride from a TOML ride script.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        /// Output directory for imu.csv, truth.csv, deltas.csv, fine.csv and speed.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a directory of preset rides.
    Corpus {
        #[arg(long, value_enum, default_value = "free")]
        preset: Preset,
        /// Total riding time, minutes.
        #[arg(long, default_value_t = 10.0)]
        minutes: f64,
        /// Length of each ride, s.
        #[arg(long, default_value_t = 60.0)]
        ride_seconds: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the motion network on a corpus directory.
    Train {
        /// Corpus directory (defaults to `paths.corpus`).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV (defaults to `<out>.loss.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Estimate a trajectory from an IMU CSV.
    Track {
        #[arg(long)]
        imu: PathBuf,
        /// Checkpoint for the model modes (defaults to `paths.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trajectory metrics of an estimate against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// RTE window, s.
        #[arg(long, default_value_t = pedaltrack_core::metrics::RTE_SPAN)]
        span: f64,
        /// JSON report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pseudo wheel speed scan scored against a truth speed CSV.
    Pws {
        #[arg(long)]
        imu: PathBuf,
        /// speed.csv written by `simulate`.
        #[arg(long)]
        speed: PathBuf,
        /// JSON report file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV of individual readings.
        #[arg(long)]
        readings: Option<PathBuf>,
    },
    /// Per-speed-level PWS error variances from a corpus directory.
    Calibrate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// JSON file with the fitted `sigma2` table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every configuration key with its default value.
    Config,
}

/// Exit status for an error: 3 for numeric failures, 2 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn command() -> clap::Command {
    Cli::command().after_long_help(format!(
        "Configuration keys (TOML, defaults shown; any key can be set with --set):\n\n{}",
        RunConfig::default_toml()
    ))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match command()
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
