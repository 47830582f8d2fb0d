// SPDX-License-Identifier: MIT OR Apache-2.0

use headlens_core::io::{render_overlay, RunManifest};
use headlens_core::{extract_token_heatmap, AtndFile, TokenInfo};

use crate::args::RenderArgs;
use crate::error::{CliError, CliResult, Context};

fn tokens(args: &RenderArgs, count: usize) -> CliResult<TokenInfo> {
    let manifest = match &args.manifest {
        Some(p) => Some(RunManifest::load(p).at(p)?),
        None => None,
    };
    let strings = match &manifest {
        Some(m) => m.token_strings.clone(),
        None => (0..count).map(|i| format!("#{i}")).collect(),
    };
    let targets = if let Some(name) = &args.token {
        let hits: Vec<usize> = (0..strings.len())
            .filter(|&i| &strings[i] == name)
            .collect();
        if hits.is_empty() {
            return Err(CliError::config(format!(
                "token {name:?} is not in the prompt; tokens: {}",
                strings.join(" ")
            )));
        }
        hits
    } else if let Some(idx) = &args.token_index {
        idx.clone()
    } else if let Some(m) = &manifest {
        m.target_token_indices.clone()
    } else {
        return Err(CliError::config(
            "one of --token, --token-index or --manifest is required",
        ));
    };
    Ok(TokenInfo::new(strings, targets)?)
}

pub fn run(args: &RenderArgs) -> CliResult<()> {
    let agg = AtndFile::read(&args.agg)
        .and_then(|f| f.to_aggregated())
        .at(&args.agg)?;
    let tokens = tokens(args, agg.token_count())?;
    let heat = extract_token_heatmap(&agg, &tokens).at(&args.agg)?;
    render_overlay(&args.image, &heat, &args.out).at(&args.image)?;
    println!("{} ({})", args.out.display(), tokens.target_text());
    Ok(())
}
