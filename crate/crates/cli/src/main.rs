//! Command-line front end for spring-mass system identification.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use springid::{Error, Result};

use crate::commands::report_text;
use crate::config::{CommonArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "springid",
    version,
    about = "Spring-mass system identification from point trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene with known spring properties.
    Synth,
    /// Search the piecewise topology and homogeneous parameters.
    FitTopology,
    /// Train the spring field on top of the topology result.
    FitField,
    /// Report reconstruction and future-prediction metrics.
    Eval,
    /// Write the simulated trajectory for external viewers.
    Export,
    /// Synth (unless --data is given), fit-topology, fit-field and eval.
    RunAll,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Synth => {
            commands::synth(&config)?;
        }
        Command::FitTopology => {
            commands::fit_topology_cmd(&config)?;
        }
        Command::FitField => {
            commands::fit_field_cmd(&config)?;
        }
        Command::Eval => print!("{}", report_text(&commands::eval_cmd(&config)?)?),
        Command::Export => print!("{}", report_text(&commands::export_cmd(&config)?)?),
        Command::RunAll => print!("{}", report_text(&commands::run_all(&config)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
