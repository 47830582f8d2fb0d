// SPDX-License-Identifier: MIT OR Apache-2.0

mod args;
mod cmd;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig, Resolved};
use error::{CliError, CliResult, EXIT_CONFIG, EXIT_OK};

fn run(cli: &Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let settings = |k, thresholds, target_r, concept| {
        Resolved::new(cli, &file, k, thresholds, target_r, concept)
    };
    match &cli.command {
        Command::Synth(a) => cmd::synth::run(a, &file, &settings(None, None, None, None)?),
        Command::Hrv(a) => cmd::hrv::run(a, &settings(a.k, None, None, None)?),
        Command::Aggregate(a) => {
            cmd::aggregate::run(a, &settings(a.k, None, a.target_r, a.concept.as_deref())?)
        }
        Command::Evaluate(a) => {
            cmd::evaluate::run(a, &settings(None, a.thresholds.as_deref(), None, None)?)
        }
        Command::Render(a) => {
            settings(None, None, None, None)?;
            cmd::render::run(a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(CliError { code, message }) => {
            eprintln!("headlens: {message}");
            ExitCode::from(code)
        }
    }
}
