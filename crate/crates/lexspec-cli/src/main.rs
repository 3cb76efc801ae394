//! Command-line front end for the lexspec crate: constraint mining,
//! contrastive fine-tuning, cross-lingual evaluation and sample analysis.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::analyze::AnalyzeCommand;
use commands::eval::{EvalBliArgs, EvalRetrievalArgs, EvalXlsimArgs};
use commands::mine::MineArgs;
use commands::train::TrainArgs;
use config::RunConfig;

/// Settings come from built-in defaults, then the `--config` file, then
/// `LEXSPEC_*` environment variables, then flags; later sources win. Every
/// command writes its fully-resolved settings next to its outputs so a run
/// can be reproduced from the artifacts alone.
#[derive(Debug, Parser)]
#[command(
    name = "lexspec",
    version,
    about = "Cross-lingual lexical encoder toolkit",
    after_help = "Settings resolve as built-in defaults, then the --config file, then \
                  LEXSPEC_* environment variables (LEXSPEC_SEED overrides the seed key), \
                  then flags; later sources win. Every command writes its fully-resolved \
                  settings next to its outputs."
)]
struct Cli {
    /// Key=value settings file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mine synonym constraints from a synset dump
    Mine(MineArgs),
    /// Fine-tune an encoder on mined constraints
    Train(TrainArgs),
    /// Score a checkpoint on translation retrieval (mean reciprocal rank)
    EvalBli(EvalBliArgs),
    /// Score a checkpoint on word-similarity correlation (Spearman)
    EvalXlsim(EvalXlsimArgs),
    /// Score a checkpoint on parallel sentence retrieval (accuracy)
    EvalRetrieval(EvalRetrievalArgs),
    /// Dataset and language-sample analyses
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_file = cli.config.as_deref();
    match &cli.command {
        Command::Mine(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            commands::mine::run(args, &config)
        }
        Command::Train(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            commands::train::run(args, &config)
        }
        Command::EvalBli(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            commands::eval::run_bli(args, &config)
        }
        Command::EvalXlsim(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            commands::eval::run_xlsim(args, &config)
        }
        Command::EvalRetrieval(args) => {
            let config = RunConfig::resolve(config_file, &args.overrides.pairs())?;
            commands::eval::run_retrieval(args, &config)
        }
        Command::Analyze(command) => commands::analyze::run(command, config_file),
    }
}

/// 1 when any cause in the error chain is an I/O failure, 2 for everything
/// else. Bad flags never reach this point; clap exits 2 on its own.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|cause| cause.is::<std::io::Error>()) {
        1
    } else {
        2
    }
}
