//! `awe`: train and evaluate recurrent acoustic word embeddings.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "awe", version, about = "Acoustic word embeddings with recurrent networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic train and dev archives.
    Synth(RunArgs),
    /// Train a word classifier and keep its best dev-AP checkpoint.
    TrainClassifier(RunArgs),
    /// Train with the cos-hinge triplet loss, optionally from a classifier.
    TrainSiamese(RunArgs),
    /// Write one embedding per segment as tab-separated text.
    Embed(RunArgs),
    /// Same-different average precision, overall and by training frequency.
    EvalAp(RunArgs),
    /// Compare analytic and finite-difference gradients on a small network.
    GradCheck(RunArgs),
    /// Print checkpoint or archive metadata.
    Inspect(RunArgs),
    /// Train a grid of architectures and tabulate dev AP.
    Sweep(RunArgs),
    /// List every configuration key.
    Keys,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` file; flags given after it take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Settings as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    settings: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_flags(&self.settings)?;
        Ok(cfg)
    }
}

type Handler = fn(&RunConfig) -> Result<(), CliError>;

fn run(command: Command) -> Result<(), CliError> {
    let (args, f): (RunArgs, Handler) = match command {
        Command::Synth(a) => (a, commands::synth),
        Command::TrainClassifier(a) => (a, commands::train_classifier_cmd),
        Command::TrainSiamese(a) => (a, commands::train_siamese_cmd),
        Command::Embed(a) => (a, commands::embed),
        Command::EvalAp(a) => (a, commands::eval_ap),
        Command::GradCheck(a) => (a, commands::grad_check_cmd),
        Command::Inspect(a) => (a, commands::inspect),
        Command::Sweep(a) => (a, commands::sweep),
        Command::Keys => {
            for (key, kind, help) in config::SCHEMA {
                println!("{key}\t{kind:?}\t{help}");
            }
            return Ok(());
        }
    };
    f(&args.resolve()?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
