//! `robocal` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure or invalid scenario, 2 usage
//! error, 3 unreadable input file, 4 insufficient motion for calibration.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "robocal", version, about = "Robot to SLAM-device extrinsic calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Mode,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). The built-in two-way rotation scenario is used
    /// when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = "ROBOCAL_SEED")]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "robocal-out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Mode {
    /// Simulate one calibration session, export its pose logs and calibrate.
    CalibrateSim {
        #[command(flatten)]
        common: Common,
        /// Return a partial solution instead of failing on unconstrained parameters.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Calibrate from a recorded pose log (CSV or JSON lines).
    CalibrateFile {
        /// Pose log; `.jsonl`/`.json`/`.ndjson` are read as JSON lines, anything else as CSV.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "robocal-out")]
        out: PathBuf,
        /// Head joint height above the floor, m; used with floor records.
        #[arg(long, default_value_t = 1.1)]
        head_height: f64,
        #[arg(long)]
        allow_partial: bool,
    },
    /// Repeated simulate-and-calibrate trials with error statistics.
    MonteCarlo {
        #[command(flatten)]
        common: Common,
        /// Number of trials; defaults to the scenario's `trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Head-shake experiment with online floor-normal correction.
    Shake {
        #[command(flatten)]
        common: Common,
        /// Overrides the scenario's encoder latency, s.
        #[arg(long)]
        latency: Option<f64>,
        /// Report the uncorrected chain in both error columns.
        #[arg(long)]
        no_correction: bool,
    },
    /// Print a saved calibration (`.json`) or Monte-Carlo trial table (`.csv`).
    Report {
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Mode::CalibrateSim { common, allow_partial } => {
            commands::calibrate_sim(common.scenario.as_deref(), common.seed, &common.out, allow_partial)
        }
        Mode::CalibrateFile { log, out, head_height, allow_partial } => {
            commands::calibrate_file(&log, &out, head_height, allow_partial)
        }
        Mode::MonteCarlo { common, trials } => {
            commands::monte_carlo(common.scenario.as_deref(), common.seed, &common.out, trials)
        }
        Mode::Shake { common, latency, no_correction } => {
            commands::shake(common.scenario.as_deref(), common.seed, &common.out, latency, no_correction)
        }
        Mode::Report { path } => commands::report(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
