//! Experiment runner: config ingestion, simulation orchestration, report
//! and time-series emission.
//!
//! Exit codes: 0 converged, 1 config/parse error, 2 horizon reached without
//! convergence, 3 divergence.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "adpdd",
    version,
    about = "Adaptively synchronized distributed primal-dual dynamics runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the adaptive-vs-frozen comparison (and gain sweep, if configured).
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, seed } => commands::run(&config, out.as_deref(), seed),
        Command::Compare { config, out, seed } => commands::compare(&config, out.as_deref(), seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                adpdd::Error::Divergence { .. } => 3u8,
                _ => 1u8,
            })
        }
    }
}
