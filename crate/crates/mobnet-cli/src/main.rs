//! Experiment orchestration: parse a TOML config, validate it against
//! the spectral gates, run the requested experiment and leave a
//! reproducible set of artifacts (manifest, CSVs, JSON summary) in the
//! configured output directory.
//!
//! Exit codes: 0 on success (statistical trend verdicts are recorded in
//! the summary, they do not fail the process), 1 when a hard pathwise
//! invariant is violated, 2 on configuration or validation errors.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mobnet", version, about = "mobile-network simulation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run { config: PathBuf },
    /// Print the derived quantities of a config without simulating.
    Describe { config: PathBuf },
    /// Run the full acceptance battery (minutes).
    SeedSuite {
        /// Master seed of the battery streams.
        #[arg(long, default_value_t = 0xacce97)]
        seed: u64,
    },
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    ExperimentConfig::parse(&text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => load(&config).and_then(run::run),
        Command::Describe { config } => load(&config).and_then(run::describe),
        Command::SeedSuite { seed } => {
            let results = mobnet::suite::run_battery(seed);
            for r in &results {
                println!("{r}");
            }
            return if mobnet::suite::all_passed(&results) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match outcome {
        Ok(run::Verdict::Ok) => ExitCode::SUCCESS,
        Ok(run::Verdict::HardFailure) => {
            eprintln!("error: a pathwise invariant was violated; see the summary");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
