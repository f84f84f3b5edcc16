//! `cdnet <command> --config <path> [--seed N] [--out DIR]`

mod commands;
mod config;
mod error;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    /// Generate synthetic scenes.
    Synth,
    /// Cut scenes into a normalized training patch set.
    Patches,
    /// Train one model.
    Train,
    /// Train a k-fold ensemble.
    TrainEnsemble,
    /// Predict a change probability map and mask for a scene.
    Predict,
    /// Score a predicted mask against ground truth.
    Eval,
    /// Render a TP/TN/FP/FN comparison PNG.
    Render,
    /// Run a variant x date-count grid on synthetic data.
    Experiment,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Patches => "patches",
            Command::Train => "train",
            Command::TrainEnsemble => "train-ensemble",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Render => "render",
            Command::Experiment => "experiment",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cdnet", version, about = "Multi-date change detection pipeline")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration for the command.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let inv = commands::Invocation {
        command: args.command.name(),
        config_path: &args.config,
        seed: args.seed,
        out: &args.out,
    };
    match commands::run(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
