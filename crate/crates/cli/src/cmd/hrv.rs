// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use headlens_core::hrv::{finalize_hrv, to_json, top_k_heads};
use headlens_core::pipeline::{accumulate_votes, parallel_map, ConceptKeyBank};
use headlens_core::{AtndFile, ContentKind};

use crate::args::{HrvArgs, Resolved};
use crate::error::{CliError, CliResult, Context};

/// `*.atnd` files in `dir`, sorted by name.
pub fn list_dumps(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::format(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::format(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "atnd") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn run(args: &HrvArgs, settings: &Resolved) -> CliResult<()> {
    let bank = ConceptKeyBank::load(&args.concept_keys).at(&args.concept_keys)?;
    let keys_path = std::fs::canonicalize(&args.concept_keys).ok();
    let paths: Vec<PathBuf> = list_dumps(&args.dumps_dir)?
        .into_iter()
        .filter(|p| std::fs::canonicalize(p).ok() != keys_path)
        .collect();

    let partial = parallel_map(settings.jobs, paths.len(), |i| {
        let path = &paths[i];
        let votes = || -> headlens_core::Result<Option<_>> {
            let dump = AtndFile::read(path)?;
            if dump.kind() != ContentKind::QueryKey {
                return Ok(None);
            }
            let mut acc = bank.new_accumulator()?;
            accumulate_votes(&mut acc, &dump, &bank)?;
            Ok(Some(acc))
        };
        Ok(votes().at(path))
    })?
    .into_iter()
    .collect::<CliResult<Vec<_>>>()?;

    let mut votes = bank.new_accumulator()?;
    let mut used = 0;
    for (acc, path) in partial.iter().zip(&paths) {
        match acc {
            Some(acc) => {
                votes.merge(acc).at(path)?;
                used += 1;
            }
            None => eprintln!("skipping {}: not a query/key dump", path.display()),
        }
    }
    if used == 0 {
        return Err(CliError::empty(format!(
            "no query/key dumps found in {}",
            args.dumps_dir.display()
        )));
    }

    let hrvs = finalize_hrv(&votes)?;
    let json = to_json(&hrvs)?;
    std::fs::write(&args.out, json)
        .map_err(|e| CliError::format(format!("{}: {e}", args.out.display())))?;

    println!("{used} dumps, {} votes", votes.total_votes());
    let k = settings.k.min(bank.heads() as usize);
    for v in &hrvs {
        let mut ranked: Vec<u32> = top_k_heads(v, k)?.ids().to_vec();
        ranked.sort_by(|a, b| {
            v.weights[*b as usize]
                .total_cmp(&v.weights[*a as usize])
                .then(a.cmp(b))
        });
        let ids: Vec<String> = ranked.iter().map(u32::to_string).collect();
        let note = if v.degenerate { " (no votes)" } else { "" };
        println!("{}{note}: top-{k} heads {}", v.concept, ids.join(" "));
    }
    Ok(())
}
