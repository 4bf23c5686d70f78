use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hcan::Error;

mod commands;

/// Forecasting with a hierarchical classification auxiliary head.
#[derive(Debug, Parser)]
#[command(name = "hcan", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write snapshot, epoch log and run summary.
    Train,
    /// Score a snapshot on one split and export predictions.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        snapshot: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train the six component configurations in order.
    Ablate,
    /// Print interval boundaries and training-split class histograms.
    InspectPartition {
        #[arg(long, value_name = "PATH")]
        snapshot: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Label(_) => 1,
        Error::Data(_) | Error::Ingestion { .. } | Error::Io { .. } | Error::Format(_) | Error::Compatibility(_) => 2,
        Error::Numeric(_) | Error::Domain(_) | Error::Training { .. } | Error::Dimension(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train => commands::train(&cli.common),
        Command::Evaluate { snapshot, split } => commands::evaluate(&cli.common, &snapshot, &split),
        Command::Ablate => commands::ablate(&cli.common),
        Command::InspectPartition { snapshot } => commands::inspect_partition(&cli.common, snapshot.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
