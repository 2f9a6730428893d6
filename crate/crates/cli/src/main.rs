//! `bctrust`: certify, score and document a black-box model against a contract.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

mod commands;
mod config;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, Mode};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl From<bctrust::Error> for CliError {
    fn from(e: bctrust::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", e.code()))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "bctrust", version, about = "Contract-based trust evaluation for black-box models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and grade behavior certificates; writes bundle.json and manifest.json.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compute a trust score by estimation or by pooling bundled certificates.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        score: ScoreArgs,
    },
    /// Render a model card from a bundle.
    Card {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Mutation search over hyperparameters of a toy trainable.
    Search {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Bayesian model selection over candidate hypotheses.
    Select {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Serve a builtin model over the line protocol on stdin/stdout.
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        builtin: String,
        #[arg(long)]
        builtin_params: Option<String>,
    },
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub prior_alpha: Option<f64>,
    #[arg(long)]
    pub prior_beta: Option<f64>,
    /// Pooling strength for inference.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Also write an automation recommendation for this risk weight.
    #[arg(long)]
    pub risk_weight: Option<f64>,
    /// Bundle read by inference and updated with the score; defaults to OUT/bundle.json.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Certify { common } => commands::certify(&common),
        Command::Score { common, score } => commands::score(&common, &score),
        Command::Card { common, bundle } => commands::card(&common, bundle),
        Command::Search { common } => commands::search(&common),
        Command::Select { common } => commands::select(&common),
        Command::Serve { builtin, builtin_params } => commands::serve(&builtin, builtin_params.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Config(msg) | CliError::Runtime(msg)) = &e;
            let _ = writeln!(io::stderr(), "error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
