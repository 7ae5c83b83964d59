mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stein_subspace::Error;

#[derive(Parser, Debug)]
#[command(name = "stein-subspace", version, about = "Stein-score subspace estimation for multi-index models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: X.csv, Y.csv, B_true.csv, provenance.json.
    Simulate(Common),
    /// Estimate a basis from a dataset directory: B_hat.csv, fit-report.json.
    Fit(Common),
    /// Compare an estimated basis with the truth: metrics.json.
    Eval(Common),
    /// Run a simulation sweep: results.csv, medians.csv, slopes.json, config.json.
    Sweep(Common),
    /// Run the fast invariant battery.
    Check(Common),
}

/// A failure with its exit code: 2 for configuration problems, 1 otherwise.
#[derive(Debug)]
pub enum Failure {
    Config { code: &'static str, message: String },
    Runtime(Error),
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure::Config {
            code: "config",
            message: message.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config { .. } => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn diagnostic(&self) -> serde_json::Value {
        let (code, message) = match self {
            Failure::Config { code, message } => (*code, message.clone()),
            Failure::Runtime(e) => (e.code(), e.to_string()),
        };
        json!({ "level": "error", "code": code, "message": message })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(message) => Failure::Config { code: "config", message },
            e => Failure::Runtime(e),
        }
    }
}

/// One JSON object per line on stderr.
pub fn log(common: &Common, level: u8, value: serde_json::Value) {
    if common.verbose >= level {
        eprintln!("{value}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Fit(c) => commands::fit(c),
        Command::Eval(c) => commands::eval(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::Check(c) => commands::check(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", f.diagnostic());
            ExitCode::from(f.exit_code())
        }
    }
}
