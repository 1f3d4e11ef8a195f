//! `deepfld`: the fatty-liver pipeline as file-based subcommands.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or format
//! error, 4 numerical failure.

mod args;
mod commands;
mod files;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(deepfld::Error),
}

impl From<deepfld::Error> for CliError {
    fn from(e: deepfld::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use deepfld::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Dimension(_) | E::Parameter(_) | E::Contract(_) | E::Config(_) | E::Io { .. } => 2,
                E::Data(_) | E::Format { .. } | E::Degenerate(_) | E::UndefinedMetric(_) => 3,
                E::Numerical { .. } | E::NonFinite(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Select(a) => commands::select(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::Migrate(a) => commands::migrate(a),
        Command::Explain(a) => commands::explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deepfld: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
