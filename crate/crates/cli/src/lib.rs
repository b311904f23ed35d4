//! Command-line harness: dataset synthesis, training, evaluation and ablation sweeps.
//!
//! Every results file carries the hash of a [`RunManifest`](manifest::RunManifest)
//! describing the resolved config and the inputs that produced it.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// A failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hosp_core::Error> for CliError {
    fn from(e: hosp_core::Error) -> Self {
        use hosp_core::Error as E;
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else {
            match e {
                E::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::cmd_synth(&a),
        Command::Train(a) => commands::cmd_train(&a).map(|_| ()),
        Command::Eval(a) => commands::cmd_eval(&a).map(|_| ()),
        Command::Ablate(a) => commands::cmd_ablate(&a).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
