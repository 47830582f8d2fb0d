// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use headlens_core::hrv::from_json;
use headlens_core::pipeline::{aggregate, head_maps, parallel_map, HeadSelection};
use headlens_core::{AtndFile, HeadRelevanceVector};

use crate::args::{AggregateArgs, Mode, Resolved};
use crate::error::{CliError, CliResult, Context};

fn selection(args: &AggregateArgs, settings: &Resolved) -> CliResult<HeadSelection> {
    let concept = || {
        settings
            .concept
            .clone()
            .ok_or_else(|| CliError::config("--concept is required for top-k and bottom-k modes"))
    };
    Ok(match args.mode {
        Mode::All => HeadSelection::All,
        Mode::TopK => HeadSelection::Top {
            concept: concept()?,
            k: settings.k,
        },
        Mode::BottomK => HeadSelection::Bottom {
            concept: concept()?,
            k: settings.k,
        },
        Mode::Explicit => HeadSelection::Explicit(
            args.heads
                .clone()
                .ok_or_else(|| CliError::config("--heads is required for explicit mode"))?,
        ),
    })
}

fn load_hrv(args: &AggregateArgs) -> CliResult<Vec<HeadRelevanceVector>> {
    let Some(path) = &args.hrv else {
        return match args.mode {
            Mode::TopK | Mode::BottomK => Err(CliError::config(
                "--hrv is required for top-k and bottom-k modes",
            )),
            _ => Ok(Vec::new()),
        };
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
    from_json(&text).at(path)
}

fn outputs(args: &AggregateArgs) -> CliResult<Vec<PathBuf>> {
    match (&args.out, &args.out_dir) {
        (Some(out), None) if args.dumps.len() == 1 => Ok(vec![out.clone()]),
        (Some(_), None) => Err(CliError::config("--out takes a single dump; use --out-dir")),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::format(format!("{}: {e}", dir.display())))?;
            args.dumps
                .iter()
                .map(|d| {
                    d.file_name().map(|name| dir.join(name)).ok_or_else(|| {
                        CliError::config(format!("{} has no file name", d.display()))
                    })
                })
                .collect()
        }
        _ => Err(CliError::config("one of --out or --out-dir is required")),
    }
}

pub fn run(args: &AggregateArgs, settings: &Resolved) -> CliResult<()> {
    let selection = selection(args, settings)?;
    let hrvs = load_hrv(args)?;
    let outs = outputs(args)?;

    let results = parallel_map(settings.jobs, args.dumps.len(), |i| {
        let path = &args.dumps[i];
        let work = || -> CliResult<usize> {
            let dump = AtndFile::read(path).at(path)?;
            let heads = selection.resolve(&hrvs, dump.header().heads)?;
            let maps = head_maps(&dump).at(path)?;
            let agg = aggregate(&maps, heads.as_ref(), settings.target_r).at(path)?;
            AtndFile::from_aggregated(&agg)?
                .write(&outs[i])
                .at(&outs[i])?;
            Ok(heads.map_or(maps.len(), |h| h.len()))
        };
        Ok(work())
    })?;
    for (r, out) in results.into_iter().zip(&outs) {
        let n = r?;
        println!("{} ({} heads, {})", out.display(), n, selection.label());
    }
    Ok(())
}
