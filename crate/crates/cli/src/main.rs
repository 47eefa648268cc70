//! `evload`: EV charging demand forecasting from the command line.
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a usage or
//! I/O error. Errors are printed to stderr prefixed with their name.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evload_core::Error;

#[derive(Debug, Parser)]
#[command(name = "evload", version, about = "EV charging demand forecasting and grid-impact checks")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML (or .json) run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs.
    #[arg(long, global = true, env = "EVLOAD_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic 15-minute charging CSV.
    Synth(commands::SynthArgs),
    /// Clean a raw charging CSV and build daily features.
    Preprocess(commands::PreprocessArgs),
    /// Periodogram, dominant periods and rolling averages of a feature file.
    Analyze(commands::AnalyzeArgs),
    /// Train the forecaster and save the best checkpoint.
    Train(commands::TrainArgs),
    /// Forecast the days after the end of a feature file.
    Predict(commands::PredictArgs),
    /// Score a checkpoint on its held-out test windows.
    Evaluate(commands::EvaluateArgs),
    /// Compare bus voltages under actual and predicted load.
    Gridcheck(commands::GridcheckArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::MissingCheckpoint(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::Context::new(&cli.global).and_then(|ctx| match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Preprocess(a) => commands::preprocess(&ctx, a),
        Command::Analyze(a) => commands::analyze(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Gridcheck(a) => commands::gridcheck(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
