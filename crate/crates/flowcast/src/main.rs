//! Command-line front end: one subcommand per pipeline stage, all behavior
//! defined by the config file and the library. Exit codes: 0 success,
//! 1 configuration error, 2 missing or malformed data, 3 numeric failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use flowcast::pipeline::{self, ExperimentConfig, PipelineError, StageRun};

#[derive(Parser)]
#[command(name = "flowcast", version, about = "Interval bars, movement classifier, costed backtests")]
struct Cli {
    /// Experiment config (TOML); omitted sections take defaults.
    #[arg(long, global = true, default_value = "flowcast.toml")]
    config: PathBuf,

    /// Root directory for stage artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download trades from the configured history endpoint.
    Fetch,
    /// Generate a seeded synthetic trade stream.
    Synth,
    /// Aggregate trades into interval bars with forward returns.
    Resample,
    /// Test each feature column for a unit root and report the decisions.
    Adf,
    /// Split bars into periods and materialize training windows.
    Split,
    /// Train the classifier on the split's example sets.
    Train,
    /// Train every (T, N) combination and rank by validation loss.
    Grid,
    /// Run the trained model over every bar chronologically.
    Evaluate,
    /// Simulate costed trades from the evaluation's predictions.
    Backtest,
    /// Summarize evaluation and backtest artifacts with charts.
    Report,
}

fn run(cli: &Cli) -> Result<StageRun, PipelineError> {
    let cfg = ExperimentConfig::load(&cli.config)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Fetch => pipeline::run_fetch(&cfg, out),
        Command::Synth => pipeline::run_synth(&cfg, out),
        Command::Resample => pipeline::run_resample(&cfg, out),
        Command::Adf => pipeline::run_adf(&cfg, out),
        Command::Split => pipeline::run_split(&cfg, out),
        Command::Train => pipeline::run_train(&cfg, out),
        Command::Grid => pipeline::run_grid_search(&cfg, out),
        Command::Evaluate => pipeline::run_evaluate(&cfg, out),
        Command::Backtest => pipeline::run_backtest(&cfg, out),
        Command::Report => pipeline::run_report(&cfg, out),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(stage) => {
            for line in &stage.notes {
                println!("{line}");
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(pipeline::exit_code(&err));
        }
    }
}
