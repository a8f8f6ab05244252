//! Command-line pipeline for the explainable temporal recommender:
//! ingest or synthesize ratings, build the explainability graph, train,
//! evaluate, render per-recommendation explanations, and sweep
//! hyperparameters — all driven by one flat config file plus overrides.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{config_help, ConfigMap};
use tempex_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "tempex",
    version,
    about = "Explainable temporal recommender pipeline"
)]
struct Cli {
    /// Flat `key = value` config file; --set overrides individual keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set train.rounds=5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a ratings file, bin epochs, apply the temporal split, re-emit with tags
    Ingest,
    /// Generate a seeded synthetic dataset from the planted low-rank model
    Synth,
    /// Build and export the explainability weight matrices
    BuildGraph,
    /// Fit the model and write a checkpoint plus a per-phase log
    Train,
    /// Score a checkpoint on the test split and write the report
    Evaluate,
    /// Render the neighbourhood evidence behind one (user, item) pair
    Explain {
        /// User id (falls back to explain.user)
        #[arg(long)]
        user: Option<usize>,
        /// Item id (falls back to explain.item)
        #[arg(long)]
        item: Option<usize>,
    },
    /// Re-train and evaluate across neighbourhood sizes, one CSV row per p
    SweepP,
    /// Grid-search the alignment weights on a validation fold
    GridSearch,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ConfigInvalid(_)
        | Error::MissingArtifact(_)
        | Error::MalformedLine { .. }
        | Error::RatingOutOfRange { .. }
        | Error::EmptyDataset => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let help = config_help();
    let matches = Cli::command()
        .after_help(help.clone())
        .after_long_help(help)
        .try_get_matches();
    let matches = match matches {
        Ok(m) => m,
        Err(e) => {
            // --help / --version print and exit 0; anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };

    let cfg = match ConfigMap::load(cli.config.as_deref(), &cli.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };

    let result = match &cli.command {
        Command::Ingest => commands::cmd_ingest(&cfg),
        Command::Synth => commands::cmd_synth(&cfg),
        Command::BuildGraph => commands::cmd_build_graph(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Explain { user, item } => commands::cmd_explain(&cfg, *user, *item),
        Command::SweepP => commands::cmd_sweep_p(&cfg),
        Command::GridSearch => commands::cmd_grid_search(&cfg),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
