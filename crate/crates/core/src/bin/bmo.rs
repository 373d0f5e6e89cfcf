use std::path::PathBuf;
use std::process::ExitCode;

use bmo_core::experiment::{run_file, RunOptions, EXIT_ERROR};
use clap::Parser;

/// Runs one BMO / Taylor / second-variation experiment from a JSON config.
///
/// Exit status: 0 when every checked property holds, 2 when a property check
/// fails, 1 on configuration or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "bmo", version)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Omits the timestamp so repeated runs are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
    /// Also writes the tabular part of the report as CSV next to the JSON output.
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_ERROR as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    let opts = RunOptions {
        seed: cli.seed,
        timestamp: !cli.no_timestamp,
        csv: cli.csv,
        base_dir: None,
    };
    match run_file(&cli.config, opts) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for v in &outcome.violations {
                eprintln!("violation: {v}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
