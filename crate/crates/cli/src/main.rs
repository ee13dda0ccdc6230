use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prefqe_cli::config::ExperimentConfig;
use prefqe_cli::runner::{read_records_csv, run_experiment, RunnerError};
use prefqe_cli::slopes::{fit_decay_slope, XAxis, YMetric};
use prefqe_cli::verify::verify_records;

/// Exit codes: 0 success, 1 completed with failures or failed verification,
/// 2 invalid invocation or configuration.
const EXIT_OK: u8 = 0;
const EXIT_FAILURES: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(
    name = "prefqe",
    version,
    about = "Off-policy evaluation from preference data: grid runner, decay-slope fits, record verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a JSON config file; resumes an
    /// interrupted sweep when pointed at the same output directory.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
    },
    /// Fit a log-log decay slope to a records file and print it as JSON.
    Slopes {
        /// Path to a records.csv produced by `run`.
        records: PathBuf,
        /// Grid axis to sweep.
        #[arg(long)]
        x: XArg,
        /// Metric column to explain.
        #[arg(long)]
        y: YArg,
    },
    /// Recompute the oracle value behind every record and check the file's
    /// internal consistency.
    Verify {
        /// Path to a records.csv produced by `run`.
        records: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum XArg {
    #[value(name = "K")]
    K,
    #[value(name = "KHF")]
    Khf,
}

#[derive(Clone, Copy, ValueEnum)]
enum YArg {
    #[value(name = "abs_err")]
    AbsErr,
    #[value(name = "reward_mse")]
    RewardMse,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Slopes { records, x, y } => cmd_slopes(&records, x, y),
        Command::Verify { records } => cmd_verify(&records),
    };
    ExitCode::from(code)
}

fn cmd_run(config_path: &PathBuf) -> u8 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", config_path.display());
            return EXIT_INVALID;
        }
    };
    let config = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", config_path.display());
            return EXIT_INVALID;
        }
    };
    match run_experiment(&config) {
        Ok(report) => {
            println!(
                "ran {} cells, skipped {} already-done, {} failed; records at {}",
                report.ran,
                report.skipped,
                report.failed.len(),
                report.records_path.display()
            );
            if report.failed.is_empty() {
                EXIT_OK
            } else {
                for (cell, message) in &report.failed {
                    eprintln!(
                        "failed cell {} (K={}, K_HF={}): {message}",
                        cell.hash, cell.k, cell.k_hf
                    );
                }
                EXIT_FAILURES
            }
        }
        Err(RunnerError::Setup(m)) => {
            eprintln!("{m}");
            EXIT_INVALID
        }
        Err(RunnerError::Io(m)) => {
            eprintln!("{m}");
            EXIT_FAILURES
        }
    }
}

fn cmd_slopes(records: &Path, x: XArg, y: YArg) -> u8 {
    let rows = match read_records_csv(records) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", records.display());
            return EXIT_INVALID;
        }
    };
    let x = match x {
        XArg::K => XAxis::K,
        XArg::Khf => XAxis::KHf,
    };
    let y = match y {
        YArg::AbsErr => YMetric::AbsErr,
        YArg::RewardMse => YMetric::RewardMse,
    };
    match fit_decay_slope(&rows, x, y) {
        Ok(fit) => {
            println!("{}", serde_json::to_string(&fit).expect("fit serializes"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_INVALID
        }
    }
}

fn cmd_verify(records: &Path) -> u8 {
    match verify_records(records) {
        Ok(outcome) if outcome.problems.is_empty() => {
            println!(
                "ok: {} records verified against the oracle",
                outcome.checked
            );
            EXIT_OK
        }
        Ok(outcome) => {
            for p in &outcome.problems {
                eprintln!("{p}");
            }
            eprintln!(
                "verification failed: {} problems across {} records",
                outcome.problems.len(),
                outcome.checked
            );
            EXIT_FAILURES
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_INVALID
        }
    }
}
