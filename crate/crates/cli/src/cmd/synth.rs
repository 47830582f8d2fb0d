// SPDX-License-Identifier: MIT OR Apache-2.0

use headlens_core::synthetic::generate_fixture;

use crate::args::{FileConfig, Resolved, SynthArgs};
use crate::error::{CliError, CliResult, Context};

pub fn run(args: &SynthArgs, file: &FileConfig, settings: &Resolved) -> CliResult<()> {
    let cfg = args.fixture_config(file);
    // An impossible fixture layout is an input error, not a bad setting.
    cfg.validate()
        .map_err(|e| CliError::format(e.to_string()))?;
    let fixture = generate_fixture(&cfg)?;
    fixture.write_to(&args.out, settings.jobs).at(&args.out)?;
    println!(
        "wrote {} images ({} heads, {} planted, seed {}) to {}",
        cfg.images,
        cfg.heads,
        cfg.planted,
        cfg.seed,
        args.out.display()
    );
    Ok(())
}
