//! `wavewarp` command-line tool: benchmark synthesis, signal analysis and
//! evaluation sweeps.
//!
//! On success a JSON summary listing the files written goes to stdout and
//! the exit code is 0. On failure a JSON error goes to stderr with exit code
//! 2 (bad arguments), 3 (unusable data) or 4 (numerical failure).

mod args;
mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use error::{CliError, CliResult, ErrorReport};

pub const TOOL: &str = "wavewarp";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    files: Vec<String>,
}

fn run(cli: Cli) -> CliResult<(&'static str, Vec<PathBuf>)> {
    match cli.command {
        Command::Synth(a) => Ok(("synth", commands::synth(&a)?)),
        Command::Analyze(a) => Ok(("analyze", commands::analyze_file(&a)?)),
        Command::Eval(a) => Ok(("eval", commands::eval(&a)?)),
    }
}

fn fail(err: &CliError) -> ExitCode {
    let message = err.to_string();
    let report = ErrorReport::new(&message, err.kind(), err.exit_code());
    eprintln!("{}", serde_json::to_string(&report).unwrap_or(message.clone()));
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.to_string().trim().to_string())),
    };
    match run(cli) {
        Ok((command, files)) => {
            let summary = Summary {
                tool: TOOL,
                version: VERSION,
                command,
                files: files.iter().map(|p| p.display().to_string()).collect(),
            };
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
