// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line arguments and their layering over a TOML config file.
//!
//! Flags and `HEADLENS_*` environment variables are both handled by clap, so
//! a value reaches the file layer only when neither is set.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use headlens_core::synthetic::FixtureConfig;
use headlens_core::{DEFAULT_TARGET_RESOLUTION, DEFAULT_THRESHOLDS, DEFAULT_TOP_K};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (ATND format v1)");

#[derive(Debug, Parser)]
#[command(name = "headlens", version = VERSION, about = "Cross-attention head analysis for diffusion models")]
pub struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true, env = "HEADLENS_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads; work is split across images only.
    #[arg(long, global = true, env = "HEADLENS_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark fixture.
    Synth(SynthArgs),
    /// Estimate head relevance vectors from query/key dumps.
    Hrv(HrvArgs),
    /// Aggregate attention maps over all or selected heads.
    Aggregate(AggregateArgs),
    /// Score aggregated maps against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Overlay a token heatmap on an image.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "HEADLENS_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub heads: Option<u32>,
    #[arg(long)]
    pub timesteps: Option<u32>,
    #[arg(long)]
    pub tokens: Option<u32>,
    #[arg(long)]
    pub d_k: Option<u32>,
    /// Comma-separated head resolutions.
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<u32>>,
    #[arg(long)]
    pub planted: Option<u32>,
    /// Heads planted for a second concept on a disjoint region.
    #[arg(long)]
    pub secondary: Option<u32>,
    #[arg(long)]
    pub images: Option<u32>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub mask_resolution: Option<u32>,
    #[arg(long)]
    pub image_resolution: Option<u32>,
}

#[derive(Debug, Args)]
pub struct HrvArgs {
    /// Directory scanned for `*.atnd` query/key dumps.
    pub dumps_dir: PathBuf,
    #[arg(long)]
    pub concept_keys: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Length of the printed per-concept preview.
    #[arg(short, long, env = "HEADLENS_K")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    All,
    TopK,
    BottomK,
    Explicit,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(required = true)]
    pub dumps: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub mode: Mode,
    #[arg(long)]
    pub hrv: Option<PathBuf>,
    #[arg(long, env = "HEADLENS_CONCEPT")]
    pub concept: Option<String>,
    #[arg(short, long, env = "HEADLENS_K")]
    pub k: Option<usize>,
    /// Comma-separated head ids for `--mode explicit`.
    #[arg(long, value_delimiter = ',')]
    pub heads: Option<Vec<u32>>,
    #[arg(long, env = "HEADLENS_TARGET_R")]
    pub target_r: Option<usize>,
    /// Output file; only valid with a single dump.
    #[arg(long, conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,
    /// Output directory; each dump is written under its own file name.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Aggregated maps for a single image, compared against `--gt`.
    pub aggs: Vec<PathBuf>,
    #[arg(long, conflicts_with = "manifests")]
    pub manifest: Option<PathBuf>,
    /// Ground-truth mask; defaults to the one named by the manifest.
    #[arg(long, conflicts_with = "manifests")]
    pub gt: Option<PathBuf>,
    /// Directory of run manifests for a batch evaluation.
    #[arg(long)]
    pub manifests: Option<PathBuf>,
    /// `LABEL=DIR` of aggregated maps named `<image_id>.atnd`.
    #[arg(long = "method", value_name = "LABEL=DIR", requires = "manifests")]
    pub methods: Vec<String>,
    /// Comma-separated thresholds in (0, 1).
    #[arg(long, value_delimiter = ',', env = "HEADLENS_THRESHOLDS")]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Summary JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub agg: PathBuf,
    /// Token text looked up in the manifest.
    #[arg(long, requires = "manifest", conflicts_with = "token_index")]
    pub token: Option<String>,
    /// Comma-separated token positions.
    #[arg(long, value_delimiter = ',')]
    pub token_index: Option<Vec<usize>>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub thresholds: Option<Vec<f64>>,
    pub target_r: Option<usize>,
    pub concept: Option<String>,
    #[serde(default)]
    pub synth: SynthFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub heads: Option<u32>,
    pub timesteps: Option<u32>,
    pub tokens: Option<u32>,
    pub d_k: Option<u32>,
    pub resolutions: Option<Vec<u32>>,
    pub planted: Option<u32>,
    pub secondary: Option<u32>,
    pub images: Option<u32>,
    pub noise: Option<f64>,
    pub mask_resolution: Option<u32>,
    pub image_resolution: Option<u32>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

/// Settings after layering flags, environment and config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub jobs: usize,
    pub k: usize,
    pub thresholds: Vec<f64>,
    pub target_r: usize,
    pub concept: Option<String>,
}

impl Resolved {
    pub fn new(
        cli: &Cli,
        file: &FileConfig,
        k: Option<usize>,
        thresholds: Option<&[f64]>,
        target_r: Option<usize>,
        concept: Option<&str>,
    ) -> CliResult<Self> {
        let r = Self {
            jobs: cli.jobs.or(file.jobs).unwrap_or(1),
            k: k.or(file.k).unwrap_or(DEFAULT_TOP_K),
            thresholds: thresholds
                .map(<[f64]>::to_vec)
                .or_else(|| file.thresholds.clone())
                .unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()),
            target_r: target_r
                .or(file.target_r)
                .unwrap_or(DEFAULT_TARGET_RESOLUTION),
            concept: concept.map(str::to_string).or_else(|| file.concept.clone()),
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> CliResult<()> {
        if self.jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        if self.k == 0 {
            return Err(CliError::config("k must be at least 1"));
        }
        if self.thresholds.is_empty() {
            return Err(CliError::config("at least one threshold is required"));
        }
        if let Some(v) = self.thresholds.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(CliError::config(format!("threshold {v} is outside (0, 1)")));
        }
        let max = headlens_core::MAX_TARGET_RESOLUTION;
        if self.target_r == 0 || self.target_r > max {
            return Err(CliError::config(format!(
                "target resolution {} is outside 1..={max}",
                self.target_r
            )));
        }
        Ok(())
    }
}

impl SynthArgs {
    pub fn fixture_config(&self, file: &FileConfig) -> FixtureConfig {
        let d = FixtureConfig::default();
        let f = &file.synth;
        FixtureConfig {
            heads: self.heads.or(f.heads).unwrap_or(d.heads),
            timesteps: self.timesteps.or(f.timesteps).unwrap_or(d.timesteps),
            tokens: self.tokens.or(f.tokens).unwrap_or(d.tokens),
            d_k: self.d_k.or(f.d_k).unwrap_or(d.d_k),
            resolutions: self
                .resolutions
                .clone()
                .or_else(|| f.resolutions.clone())
                .unwrap_or(d.resolutions),
            planted: self.planted.or(f.planted).unwrap_or(d.planted),
            secondary_planted: self
                .secondary
                .or(f.secondary)
                .unwrap_or(d.secondary_planted),
            images: self.images.or(f.images).unwrap_or(d.images),
            noise: self.noise.or(f.noise).unwrap_or(d.noise),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            mask_resolution: self
                .mask_resolution
                .or(f.mask_resolution)
                .unwrap_or(d.mask_resolution),
            image_resolution: self
                .image_resolution
                .or(f.image_resolution)
                .unwrap_or(d.image_resolution),
        }
    }
}
