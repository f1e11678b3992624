mod config;
mod pretrain;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Error raised by a bad config, a missing input or a bad flag; exits with 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "cptrd", version, about = "Continual prompt tuning experiments for rumor detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the masked-LM backbone and write its checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pretraining seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every method x order x seed cell of the grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Grid cells executed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize completed runs into a table and plot data.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain { config, out, seed } => pretrain::cmd_pretrain(&config, out, seed),
        Command::Run { config, out, seed, jobs } => run::cmd_run(&config, out, seed, jobs),
        Command::Report { out } => report::cmd_report(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
