mod analysis;
mod config;
mod json;
mod output;
mod sim;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "oqs", version, about = "Markovianity criteria for open quantum and classical processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run selected criteria on a model.
    Analyze(Flags),
    /// Run every applicable criterion and check the implication edges.
    Hierarchy(Flags),
    /// Quantum trajectories for a master-equation preset.
    Mcwf(Flags),
    /// Monte-Carlo sampling of a classical SDE preset.
    Mcsm(Flags),
    /// Write a classical process's joint table as JSON.
    Export(Flags),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, model or criterion: exit 2.
    Usage(String),
    /// Completed run whose outcome is a failure: exit 1.
    Failed(String),
}

impl From<oqs_core::Error> for CliError {
    fn from(e: oqs_core::Error) -> Self {
        match e {
            oqs_core::Error::NegativeRate { .. } | oqs_core::Error::StepTooLarge(_) => CliError::Failed(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, flags) = match &cli.command {
        Command::Analyze(f) => ("analyze", f),
        Command::Hierarchy(f) => ("hierarchy", f),
        Command::Mcwf(f) => ("mcwf", f),
        Command::Mcsm(f) => ("mcsm", f),
        Command::Export(f) => ("export", f),
    };
    let cfg = RunConfig::resolve(name, flags)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?
    };
    pool.install(|| match cli.command {
        Command::Analyze(_) => analysis::analyze(&cfg),
        Command::Hierarchy(_) => analysis::hierarchy(&cfg),
        Command::Mcwf(_) => sim::mcwf(&cfg),
        Command::Mcsm(_) => sim::mcsm(&cfg),
        Command::Export(_) => analysis::export(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("oqs: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("oqs: {msg}");
            ExitCode::from(2)
        }
    }
}
