// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use headlens_core::io::{read_mask, RunManifest};
use headlens_core::pipeline::parallel_map;
use headlens_core::seg_eval::{summarize, write_csv};
use headlens_core::{extract_token_heatmap, score_heatmap, AtndFile, BinaryMask, EvalRecord};

use crate::args::{EvaluateArgs, Resolved};
use crate::error::{CliError, CliResult, Context};

struct Method {
    label: String,
    source: PathBuf,
}

/// Labels must be unique for the summary; repeats get a `#n` suffix.
fn unique_labels(labels: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    labels
        .into_iter()
        .map(|l| {
            let mut candidate = l.clone();
            let mut n = 2;
            while !seen.insert(candidate.clone()) {
                candidate = format!("{l}#{n}");
                n += 1;
            }
            candidate
        })
        .collect()
}

fn score(
    agg_path: &Path,
    manifest: &RunManifest,
    gt: &BinaryMask,
    label: &str,
    thresholds: &[f64],
) -> CliResult<Vec<EvalRecord>> {
    let agg = AtndFile::read(agg_path)
        .and_then(|f| f.to_aggregated())
        .at(agg_path)?;
    let tokens = manifest.token_info()?;
    let heat = extract_token_heatmap(&agg, &tokens).at(agg_path)?;
    let ious = score_heatmap(&heat, gt, thresholds).at(agg_path)?;
    Ok(thresholds
        .iter()
        .zip(ious)
        .map(|(&threshold, iou)| EvalRecord {
            image_id: manifest.image_id.clone(),
            token: tokens.target_text(),
            method: label.to_string(),
            threshold,
            iou,
        })
        .collect())
}

fn gt_for(manifest: &RunManifest, path: &Path, explicit: Option<&Path>) -> CliResult<BinaryMask> {
    let gt = explicit
        .map(Path::to_path_buf)
        .or_else(|| manifest.gt_mask())
        .ok_or_else(|| {
            CliError::format(format!("{}: no ground-truth mask given", path.display()))
        })?;
    read_mask(&gt).at(&gt)
}

/// Manifests in `dir`, sorted by image id. JSON files without an
/// `image_id` field (concept sidecars, truth files) are ignored.
fn batch_manifests(dir: &Path) -> CliResult<Vec<(PathBuf, RunManifest)>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::format(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::format(format!("{}: {e}", dir.display())))?
            .path();
        if !path.extension().is_some_and(|x| x == "json") {
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
        let is_manifest = serde_json::from_str::<serde_json::Value>(&text)
            .map(|v| v.get("image_id").is_some())
            .unwrap_or(true);
        if is_manifest {
            let m = RunManifest::load(&path).at(&path)?;
            out.push((path, m));
        }
    }
    out.sort_by(|a, b| a.1.image_id.cmp(&b.1.image_id));
    Ok(out)
}

fn parse_methods(specs: &[String]) -> CliResult<Vec<Method>> {
    specs
        .iter()
        .map(|s| {
            let (label, dir) = s
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--method {s:?} is not LABEL=DIR")))?;
            if label.is_empty() {
                return Err(CliError::config(format!(
                    "--method {s:?} has an empty label"
                )));
            }
            Ok(Method {
                label: label.to_string(),
                source: PathBuf::from(dir),
            })
        })
        .collect()
}

pub fn run(args: &EvaluateArgs, settings: &Resolved) -> CliResult<()> {
    let thresholds = &settings.thresholds;
    let (labels, records) = if let Some(dir) = &args.manifests {
        if !args.aggs.is_empty() {
            return Err(CliError::config(
                "positional maps cannot be combined with --manifests",
            ));
        }
        let methods = parse_methods(&args.methods)?;
        if methods.is_empty() {
            return Err(CliError::config(
                "batch evaluation needs at least one --method",
            ));
        }
        let labels = unique_labels(methods.iter().map(|m| m.label.clone()).collect());
        let manifests = batch_manifests(dir)?;
        if manifests.is_empty() {
            return Err(CliError::empty(format!(
                "no run manifests in {}",
                dir.display()
            )));
        }
        let per_image = parallel_map(settings.jobs, manifests.len(), |i| {
            let (path, manifest) = &manifests[i];
            let work = || -> CliResult<Vec<EvalRecord>> {
                let gt = gt_for(manifest, path, None)?;
                let name = manifest.dump_path.file_name().ok_or_else(|| {
                    CliError::format(format!("{}: dump path has no file name", path.display()))
                })?;
                let mut out = Vec::new();
                for (m, label) in methods.iter().zip(&labels) {
                    out.extend(score(
                        &m.source.join(name),
                        manifest,
                        &gt,
                        label,
                        thresholds,
                    )?);
                }
                Ok(out)
            };
            Ok(work())
        })?;
        let mut records = Vec::new();
        for r in per_image {
            records.extend(r?);
        }
        (labels, records)
    } else {
        let manifest_path = args
            .manifest
            .as_ref()
            .ok_or_else(|| CliError::config("--manifest is required without --manifests"))?;
        if args.aggs.is_empty() {
            return Err(CliError::empty("no aggregated maps given"));
        }
        let manifest = RunManifest::load(manifest_path).at(manifest_path)?;
        let gt = gt_for(&manifest, manifest_path, args.gt.as_deref())?;
        let labels = unique_labels(
            args.aggs
                .iter()
                .map(|p| {
                    p.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string())
                })
                .collect(),
        );
        let mut records = Vec::new();
        for (path, label) in args.aggs.iter().zip(&labels) {
            records.extend(score(path, &manifest, &gt, label, thresholds)?);
        }
        (labels, records)
    };

    let summary = summarize(&records, &labels, thresholds)?;
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
        write_csv(&records, std::io::BufWriter::new(file)).at(path)?;
    }
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::format(e.to_string()))? + "\n";
    match &args.summary {
        Some(path) => std::fs::write(path, json)
            .map_err(|e| CliError::format(format!("{}: {e}", path.display())))?,
        None => print!("{json}"),
    }
    Ok(())
}
