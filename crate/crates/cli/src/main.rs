mod commands;
mod output;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Plan client/server splits of transformer inference and measure the
/// server-side effect.
#[derive(Debug, Parser)]
#[command(name = "splitplan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the per-layer cost profile of a model.
    Profile(commands::ProfileArgs),
    /// Plan a single placement from a profile and a scenario.
    Plan(commands::PlanArgs),
    /// Plan every point of a grid and write one CSV row per planner.
    Sweep(commands::SweepArgs),
    /// Replay sweep scenarios through a FIFO server.
    Simulate(commands::SimulateArgs),
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const UNWRITABLE: u8 = 3;
    pub const INFEASIBLE: u8 = 4;

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: Self::CONFIG,
            message: message.into(),
        }
    }

    pub fn unwritable(what: &str, err: std::io::Error) -> Self {
        Self {
            code: Self::UNWRITABLE,
            message: format!("cannot write {what}: {err}"),
        }
    }

    pub fn unreadable(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::config(format!("cannot read {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<splitplan::Error> for CliError {
    fn from(err: splitplan::Error) -> Self {
        use splitplan::Error as E;
        let code = match err {
            E::UnknownPreset(_)
            | E::Config(_)
            | E::DegenerateModel
            | E::LengthMismatch { .. }
            | E::OracleTooLarge { .. }
            | E::TableTooLarge { .. }
            | E::Csv(_) => Self::CONFIG,
            E::HeadOfLineBlocked { .. } | E::Io(_) => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPLITPLAN_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile(args) => commands::profile(args),
        Command::Plan(args) => commands::plan(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Simulate(args) => commands::simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("splitplan: {err}");
            ExitCode::from(err.code)
        }
    }
}
