//! Command-line front end: synthetic data, training, segmentation,
//! standalone evolution, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (NaN/Inf), 4 I/O or data error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<contour_core::Error> for CliError {
    fn from(e: contour_core::Error) -> Self {
        use contour_core::Error as E;
        let code = match &e {
            E::NonFinite { .. } => EXIT_NUMERICAL,
            E::Io { .. } | E::Data { .. } | E::Checkpoint { .. } => EXIT_IO,
            E::Config(_) | E::InvalidArgument { .. } | E::ShapeMismatch { .. } => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "contour", version, about = "Learned level-set segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset folder.
    Synth(commands::synth::Args),
    /// Train the backbone through the unrolled evolution.
    Train(commands::train::Args),
    /// Segment a folder of images with a trained checkpoint.
    Segment(commands::segment::Args),
    /// Run the contour evolution alone on one image.
    Evolve(commands::evolve::Args),
    /// Score predicted masks against ground truth.
    Eval(commands::eval::Args),
    /// Compare tape gradients with central differences.
    Gradcheck(commands::gradcheck::Args),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Segment(a) => commands::segment::run(a),
        Command::Evolve(a) => commands::evolve::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
    }
}

/// Parse `args`, run, print errors and map them to an exit code.
pub fn main_with_args<I, A>(args: I) -> ExitCode
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
