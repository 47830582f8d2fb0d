// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic synthetic benchmark with planted concept-relevant heads.
//!
//! Every head gets its own random orthonormal basis of "semantic
//! directions". Token keys and concept keys are scaled basis vectors, so a
//! query's coefficient along a direction is exactly the attention logit for
//! the matching key. Queries are then built directly in logit units:
//!
//! - every head pulls towards the start-of-text token (`SOT_LOGIT`);
//! - every head leans towards its own concept (`CONCEPT_LOGIT`), which only
//!   affects concept attention, never token attention;
//! - planted heads attend to the target word inside a jittered copy of the
//!   ground-truth ellipse with a boost calibrated from the softmax;
//! - background heads attend to the target word inside a distractor ellipse
//!   with a per-head gain small enough never to flip their concept vote.
//!
//! With `noise = 0` every planted head votes for the target concept at
//! every timestep and every background head votes for its own concept.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::aggregation::{extract_token_heatmap, HeadMaps, HeadSet, DEFAULT_TARGET_RESOLUTION};
use crate::attention::TokenInfo;
use crate::error::{Error, Result};
use crate::hrv::{finalize_hrv, find_concept, top_k_heads, HeadRelevanceVector, VoteAccumulator};
use crate::io::atnd::{AtndFile, AtndHeader, ContentKind, HeadBlock};
use crate::io::manifest::{ConceptManifest, RunManifest, SCHEMA_VERSION};
use crate::io::mask::write_mask;
use crate::pipeline::{
    accumulate_votes, aggregate, head_maps, parallel_map, ConceptKeyBank, HeadSelection,
};
use crate::rng::Xoshiro256StarStar;
use crate::seg_eval::{score_heatmap, summarize, BinaryMask, EvalRecord, EvalSummary};

/// "HEADLENS" in ASCII.
pub const DEFAULT_SEED: u64 = 0x4845_4144_4c45_4e53;

pub const MODEL_ID: &str = "headlens-synthetic-v1";

pub const CONCEPTS: [&str; 4] = ["animals", "electronics", "food", "landscape"];

pub const CONCEPT_WORDS: [[&str; 10]; 4] = [
    [
        "bear", "bird", "cat", "cow", "dog", "elephant", "sheep", "horse", "monkey", "zebra",
    ],
    [
        "mouse",
        "keyboard",
        "laptop",
        "phone",
        "monitor",
        "camera",
        "speaker",
        "tablet",
        "router",
        "headphones",
    ],
    [
        "apple", "bread", "pizza", "cake", "banana", "cheese", "soup", "rice", "carrot", "cookie",
    ],
    [
        "mountain", "river", "forest", "beach", "desert", "valley", "lake", "meadow", "canyon",
        "glacier",
    ],
];

/// Concept the planted heads respond to.
pub const TARGET_CONCEPT: usize = 0;
/// Concept of the optional second planted group (ambiguous-word fixtures).
pub const SECONDARY_CONCEPT: usize = 1;

/// Position of the object word in "photo of a {word}" after the SOT token.
pub const TARGET_TOKEN: usize = 4;

const SOT_TOKEN: usize = 0;
const SOT_LOGIT: f64 = 3.5;
const CONCEPT_LOGIT: f64 = 2.5;
/// Planted in-region target mass relative to out-of-region mass.
const IN_OUT_MASS_RATIO: f64 = 10.0;
const DISTRACTOR_GAIN: (f64, f64) = (0.5, 2.0);
const CENTER_JITTER: f64 = 0.2;
const AXIS_SCALE: (f64, f64) = (0.85, 1.15);
const GT_AREA: (f64, f64) = (0.10, 0.40);
const DISTRACTOR_AREA: (f64, f64) = (0.08, 0.20);
const REGION_MARGIN: f64 = 0.04;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub heads: u32,
    pub timesteps: u32,
    pub tokens: u32,
    pub d_k: u32,
    /// Head resolutions are drawn uniformly from this list.
    pub resolutions: Vec<u32>,
    pub planted: u32,
    /// Heads planted for the second concept; 0 disables the ambiguous scene.
    pub secondary_planted: u32,
    pub images: u32,
    pub noise: f64,
    pub seed: u64,
    pub mask_resolution: u32,
    pub image_resolution: u32,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            heads: 128,
            timesteps: 5,
            tokens: 8,
            d_k: 16,
            resolutions: vec![8, 16, 32, 64],
            planted: 30,
            secondary_planted: 0,
            images: 20,
            noise: 0.1,
            seed: DEFAULT_SEED,
            mask_resolution: DEFAULT_TARGET_RESOLUTION as u32,
            image_resolution: 256,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.heads < 2 || self.timesteps == 0 || self.images == 0 {
            return fail("heads must be >= 2, timesteps and images >= 1".into());
        }
        if self.planted == 0 || self.planted >= self.heads {
            return fail(format!(
                "planted head count {} must be in 1..{}",
                self.planted, self.heads
            ));
        }
        if self.planted + self.secondary_planted >= self.heads {
            return fail(format!(
                "{} planted + {} secondary heads leave no background heads out of {}",
                self.planted, self.secondary_planted, self.heads
            ));
        }
        if (self.tokens as usize) <= TARGET_TOKEN {
            return fail(format!("need at least {} tokens", TARGET_TOKEN + 1));
        }
        let needed = self.tokens as usize + CONCEPTS.len();
        if (self.d_k as usize) < needed {
            return fail(format!(
                "d_k = {} is too small; {needed} orthogonal directions are needed",
                self.d_k
            ));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return fail(format!(
                "noise level {} must be finite and >= 0",
                self.noise
            ));
        }
        if self.resolutions.is_empty()
            || self
                .resolutions
                .iter()
                .any(|&r| r == 0 || r > self.mask_resolution)
        {
            return fail(format!(
                "head resolutions {:?} must be in 1..={}",
                self.resolutions, self.mask_resolution
            ));
        }
        if self.image_resolution == 0 {
            return fail("image resolution must be >= 1".into());
        }
        Ok(())
    }
}

/// Boost (in logits) that gives the target token `ratio` times more
/// attention inside the region than outside it.
///
/// Outside, the target competes with the SOT token (logit `sot`) and
/// `tokens - 2` neutral tokens; inside it additionally carries logit `b`:
/// `m_out = 1 / (e^sot + tokens - 1)` and
/// `m_in = e^b / (e^b + e^sot + tokens - 2)`. Solving `m_in = ratio * m_out`
/// for `b` gives the result.
pub fn planted_boost(tokens: usize, sot: f64, ratio: f64) -> Result<f64> {
    let out_mass = 1.0 / (sot.exp() + tokens as f64 - 1.0);
    let in_mass = ratio * out_mass;
    if !(in_mass > 0.0 && in_mass < 1.0) {
        return Err(Error::Validation(format!(
            "mass ratio {ratio} is unreachable with {tokens} tokens"
        )));
    }
    Ok((in_mass * (sot.exp() + tokens as f64 - 2.0) / (1.0 - in_mass)).ln())
}

/// Axis-aligned ellipse in unit image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }

    /// Mask of pixel centers inside the ellipse.
    pub fn mask(&self, r: usize) -> BinaryMask {
        let step = 1.0 / r as f64;
        BinaryMask::from_fn(r, |y, x| {
            self.contains((x as f64 + 0.5) * step, (y as f64 + 0.5) * step)
        })
    }

    /// Fraction of each pixel covered, estimated on a 4×4 subgrid.
    pub fn coverage(&self, r: usize) -> Vec<f64> {
        let n = SUPERSAMPLE;
        let step = 1.0 / (r * n) as f64;
        let mut out = Vec::with_capacity(r * r);
        for y in 0..r {
            for x in 0..r {
                let mut hits = 0;
                for sy in 0..n {
                    for sx in 0..n {
                        let px = ((x * n + sx) as f64 + 0.5) * step;
                        let py = ((y * n + sy) as f64 + 0.5) * step;
                        hits += self.contains(px, py) as usize;
                    }
                }
                out.push(hits as f64 / (n * n) as f64);
            }
        }
        out
    }

    fn inflated(&self, margin: f64) -> Ellipse {
        Ellipse {
            ax: self.ax + margin,
            ay: self.ay + margin,
            ..*self
        }
    }

    fn overlaps(&self, other: &Ellipse, margin: f64) -> bool {
        let (a, b) = (self.inflated(margin), other.inflated(margin));
        let r = 128;
        let step = 1.0 / r as f64;
        (0..r * r).any(|i| {
            let (x, y) = (((i % r) as f64 + 0.5) * step, ((i / r) as f64 + 0.5) * step);
            a.contains(x, y) && b.contains(x, y)
        })
    }

    fn sample(rng: &mut Xoshiro256StarStar, area: (f64, f64)) -> Ellipse {
        let a = rng.uniform(area.0, area.1);
        let aspect = rng.uniform(0.6, 1.6);
        let ax = (a / PI * aspect).sqrt().min(0.48);
        let ay = (a / PI / aspect).sqrt().min(0.48);
        let cx = rng.uniform(ax, 1.0 - ax);
        let cy = rng.uniform(ay, 1.0 - ay);
        Ellipse { cx, cy, ax, ay }
    }

    fn jittered(&self, rng: &mut Xoshiro256StarStar) -> Ellipse {
        Ellipse {
            cx: self.cx + rng.uniform(-CENTER_JITTER, CENTER_JITTER) * self.ax,
            cy: self.cy + rng.uniform(-CENTER_JITTER, CENTER_JITTER) * self.ay,
            ax: self.ax * rng.uniform(AXIS_SCALE.0, AXIS_SCALE.1),
            ay: self.ay * rng.uniform(AXIS_SCALE.0, AXIS_SCALE.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum HeadRole {
    Target,
    Secondary,
    Background { concept: usize, gain: f64 },
}

impl HeadRole {
    fn concept(self) -> usize {
        match self {
            HeadRole::Target => TARGET_CONCEPT,
            HeadRole::Secondary => SECONDARY_CONCEPT,
            HeadRole::Background { concept, .. } => concept,
        }
    }
}

#[derive(Debug, Clone)]
struct HeadModel {
    resolution: u32,
    role: HeadRole,
    /// `directions × d_k` orthonormal rows.
    basis: Vec<f64>,
}

impl HeadModel {
    fn direction(&self, i: usize, d_k: usize) -> &[f64] {
        &self.basis[i * d_k..(i + 1) * d_k]
    }
}

fn orthonormal_basis(rng: &mut Xoshiro256StarStar, count: usize, d_k: usize) -> Vec<f64> {
    let mut basis: Vec<f64> = Vec::with_capacity(count * d_k);
    while basis.len() < count * d_k {
        let mut v: Vec<f64> = (0..d_k).map(|_| rng.normal()).collect();
        // Modified Gram-Schmidt, twice for stability.
        for _ in 0..2 {
            for b in basis.chunks_exact(d_k) {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.extend(v.iter().map(|x| x / norm));
        }
    }
    basis
}

/// Ground truth recorded alongside a fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub heads: u32,
    pub target_concept: String,
    pub planted_head_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_concept: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub secondary_head_ids: Vec<u32>,
    pub images: Vec<TruthImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImage {
    pub image_id: String,
    pub target_token_index: usize,
    pub gt_region: Ellipse,
    pub distractor_region: Ellipse,
}

impl FixtureTruth {
    pub fn planted(&self) -> Result<HeadSet> {
        HeadSet::new(self.planted_head_ids.iter().copied(), self.heads)
    }
}

/// One generated benchmark image.
#[derive(Debug, Clone)]
pub struct FixtureImage {
    pub image_id: String,
    pub manifest: RunManifest,
    pub dump: AtndFile,
    pub gt: BinaryMask,
    pub gt_region: Ellipse,
    pub distractor_region: Ellipse,
    pub image: RgbImage,
}

impl FixtureImage {
    pub fn token_info(&self) -> Result<TokenInfo> {
        self.manifest.token_info()
    }

    /// Ground-truth mask of the distractor object.
    pub fn distractor_mask(&self) -> BinaryMask {
        self.distractor_region.mask(self.gt.resolution())
    }
}

/// A fixture's model-level state; images are generated on demand.
#[derive(Debug, Clone)]
pub struct Fixture {
    cfg: FixtureConfig,
    heads: Vec<HeadModel>,
    boost: f64,
    planted: Vec<u32>,
    secondary: Vec<u32>,
    concept_keys: AtndFile,
    concept_manifest: ConceptManifest,
}

/// Builds the fixture model: head layout, bases, roles and concept keys.
pub fn generate_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    cfg.validate()?;
    let mut rng = Xoshiro256StarStar::stream(cfg.seed, 0);
    let h = cfg.heads;
    let d_k = cfg.d_k as usize;
    let s = cfg.tokens as usize;
    let directions = s + CONCEPTS.len();

    let resolutions: Vec<u32> = (0..h)
        .map(|_| cfg.resolutions[rng.below(cfg.resolutions.len() as u64) as usize])
        .collect();
    let chosen = rng.choose(h, cfg.planted + cfg.secondary_planted);
    let mut planted = chosen[..cfg.planted as usize].to_vec();
    let mut secondary = chosen[cfg.planted as usize..].to_vec();
    planted.sort_unstable();
    secondary.sort_unstable();

    // Background heads avoid the secondary concept so its ranking stays clean.
    let first_bg_concept = if cfg.secondary_planted > 0 { 2 } else { 1 };
    let bg_concepts = (CONCEPTS.len() - first_bg_concept) as u64;

    let mut heads = Vec::with_capacity(h as usize);
    for (id, &resolution) in resolutions.iter().enumerate() {
        let id = id as u32;
        let role = if planted.binary_search(&id).is_ok() {
            HeadRole::Target
        } else if secondary.binary_search(&id).is_ok() {
            HeadRole::Secondary
        } else {
            HeadRole::Background {
                concept: first_bg_concept + rng.below(bg_concepts) as usize,
                gain: rng.uniform(DISTRACTOR_GAIN.0, DISTRACTOR_GAIN.1),
            }
        };
        let basis = orthonormal_basis(&mut rng, directions, d_k);
        heads.push(HeadModel {
            resolution,
            role,
            basis,
        });
    }

    let scale = (d_k as f64).sqrt();
    let blocks = heads
        .iter()
        .map(|head| {
            let mut data = Vec::with_capacity(CONCEPTS.len() * d_k);
            for c in 0..CONCEPTS.len() {
                let own = head.direction(s + c, d_k);
                if c == TARGET_CONCEPT {
                    let word = head.direction(TARGET_TOKEN, d_k);
                    data.extend(
                        own.iter()
                            .zip(word)
                            .map(|(a, b)| (scale * FRAC_1_SQRT_2 * (a + b)) as f32),
                    );
                } else {
                    data.extend(own.iter().map(|a| (scale * a) as f32));
                }
            }
            HeadBlock {
                resolution: 1,
                data,
            }
        })
        .collect();
    let concept_keys = AtndFile::new(
        AtndHeader {
            heads: h,
            timesteps: 1,
            tokens: CONCEPTS.len() as u32,
            d_k: cfg.d_k,
            kind: ContentKind::ConceptKeys,
        },
        blocks,
    )?;

    let sampled_concept_words = CONCEPTS
        .iter()
        .zip(CONCEPT_WORDS.iter())
        .map(|(c, words)| {
            (
                c.to_string(),
                words[rng.below(words.len() as u64) as usize].to_string(),
            )
        })
        .collect();
    let concept_manifest = ConceptManifest {
        schema_version: SCHEMA_VERSION,
        model_id: MODEL_ID.into(),
        concepts: CONCEPTS.iter().map(|c| c.to_string()).collect(),
        concept_words: CONCEPTS
            .iter()
            .zip(CONCEPT_WORDS.iter())
            .map(|(c, w)| (c.to_string(), w.iter().map(|x| x.to_string()).collect()))
            .collect(),
        sampled_concept_words,
        keys_path: PathBuf::from("concept_keys.atnd"),
    };

    Ok(Fixture {
        cfg: cfg.clone(),
        heads,
        boost: planted_boost(s, SOT_LOGIT, IN_OUT_MASS_RATIO)?,
        planted,
        secondary,
        concept_keys,
        concept_manifest,
    })
}

fn prompt_tokens(word: &str, count: usize) -> Vec<String> {
    let mut tokens: Vec<String> = ["<|startoftext|>", "photo", "of", "a", word]
        .iter()
        .map(|t| t.to_string())
        .collect();
    tokens.resize(count, "<|endoftext|>".to_string());
    tokens
}

impl Fixture {
    pub fn config(&self) -> &FixtureConfig {
        &self.cfg
    }

    pub fn concept_keys(&self) -> &AtndFile {
        &self.concept_keys
    }

    pub fn concept_manifest(&self) -> &ConceptManifest {
        &self.concept_manifest
    }

    pub fn concept_bank(&self) -> Result<ConceptKeyBank> {
        ConceptKeyBank::from_atnd(&self.concept_keys, self.concept_manifest.concepts.clone())
    }

    /// Logit boost applied to planted heads inside their region.
    pub fn boost(&self) -> f64 {
        self.boost
    }

    pub fn planted(&self) -> Result<HeadSet> {
        HeadSet::new(self.planted.iter().copied(), self.cfg.heads)
    }

    pub fn head_resolution(&self, head: u32) -> u32 {
        self.heads[head as usize].resolution
    }

    pub fn image_id(index: u32) -> String {
        format!("img_{index:03}")
    }

    fn regions(rng: &mut Xoshiro256StarStar) -> Result<(Ellipse, Ellipse)> {
        for _ in 0..64 {
            let gt = Ellipse::sample(rng, GT_AREA);
            for _ in 0..256 {
                let d = Ellipse::sample(rng, DISTRACTOR_AREA);
                if !gt.overlaps(&d, REGION_MARGIN) {
                    return Ok((gt, d));
                }
            }
        }
        Err(Error::Validation(
            "could not place disjoint object regions".into(),
        ))
    }

    /// Generates image `index` (deterministic in seed and index only).
    pub fn image(&self, index: u32) -> Result<FixtureImage> {
        if index >= self.cfg.images {
            return Err(Error::Validation(format!(
                "image {index} out of range for {} images",
                self.cfg.images
            )));
        }
        let cfg = &self.cfg;
        let mut rng = Xoshiro256StarStar::stream(cfg.seed, index as u64 + 1);
        let d_k = cfg.d_k as usize;
        let s = cfg.tokens as usize;
        let t = cfg.timesteps as usize;
        let scale = (d_k as f64).sqrt();

        let word = if cfg.secondary_planted > 0 {
            "mouse"
        } else {
            CONCEPT_WORDS[TARGET_CONCEPT][index as usize % CONCEPT_WORDS[TARGET_CONCEPT].len()]
        };
        let (gt_region, distractor_region) = Self::regions(&mut rng)?;

        let mut blocks = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let r = head.resolution as usize;
            let (region, gain) = match head.role {
                HeadRole::Target => (gt_region.jittered(&mut rng), self.boost),
                HeadRole::Secondary => (distractor_region.jittered(&mut rng), self.boost),
                HeadRole::Background { gain, .. } => (distractor_region, gain),
            };
            let weight = region.coverage(r);
            let sot = head.direction(SOT_TOKEN, d_k);
            let own = head.direction(s + head.role.concept(), d_k);
            let word_dir = head.direction(TARGET_TOKEN, d_k);

            let mut data = Vec::with_capacity(t * r * r * d_k + s * d_k);
            let mut q = vec![0.0f64; d_k];
            for _ in 0..t {
                for &w in &weight {
                    let boost = gain * w;
                    for j in 0..d_k {
                        q[j] = SOT_LOGIT * sot[j] + CONCEPT_LOGIT * own[j] + boost * word_dir[j];
                    }
                    if cfg.noise > 0.0 {
                        for v in &mut q {
                            *v += cfg.noise * rng.normal();
                        }
                    }
                    data.extend(q.iter().map(|&v| v as f32));
                }
            }
            for tok in 0..s {
                data.extend(head.direction(tok, d_k).iter().map(|v| (scale * v) as f32));
            }
            blocks.push(HeadBlock {
                resolution: head.resolution,
                data,
            });
        }
        let dump = AtndFile::new(
            AtndHeader {
                heads: cfg.heads,
                timesteps: cfg.timesteps,
                tokens: cfg.tokens,
                d_k: cfg.d_k,
                kind: ContentKind::QueryKey,
            },
            blocks,
        )?;

        let image_id = Self::image_id(index);
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            image_id: image_id.clone(),
            prompt: format!("photo of a {word}"),
            token_strings: prompt_tokens(word, s),
            target_token_indices: vec![TARGET_TOKEN],
            seed: cfg.seed,
            model_id: MODEL_ID.into(),
            timesteps: cfg.timesteps,
            sampled_concept_words: self.concept_manifest.sampled_concept_words.clone(),
            dump_path: format!("{image_id}.atnd").into(),
            gt_mask_path: Some(format!("{image_id}_gt.pgm").into()),
            image_path: Some(format!("{image_id}.png").into()),
            base_dir: PathBuf::new(),
        };
        Ok(FixtureImage {
            image_id,
            manifest,
            dump,
            gt: gt_region.mask(cfg.mask_resolution as usize),
            gt_region,
            distractor_region,
            image: render_scene(cfg.image_resolution, &gt_region, &distractor_region),
        })
    }

    pub fn truth(&self) -> Result<FixtureTruth> {
        let images = (0..self.cfg.images)
            .map(|i| {
                let mut rng = Xoshiro256StarStar::stream(self.cfg.seed, i as u64 + 1);
                let (gt, d) = Self::regions(&mut rng)?;
                Ok(TruthImage {
                    image_id: Self::image_id(i),
                    target_token_index: TARGET_TOKEN,
                    gt_region: gt,
                    distractor_region: d,
                })
            })
            .collect::<Result<_>>()?;
        Ok(FixtureTruth {
            heads: self.cfg.heads,
            target_concept: CONCEPTS[TARGET_CONCEPT].into(),
            planted_head_ids: self.planted.clone(),
            secondary_concept: (!self.secondary.is_empty())
                .then(|| CONCEPTS[SECONDARY_CONCEPT].to_string()),
            secondary_head_ids: self.secondary.clone(),
            images,
        })
    }

    /// Writes concept keys, truth, and per-image dump/manifest/mask/PNG.
    pub fn write_to(&self, dir: impl AsRef<Path>, jobs: usize) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        self.concept_keys.write(dir.join("concept_keys.atnd"))?;
        write(
            "concept_keys.json",
            self.concept_manifest.to_json()?.as_bytes(),
        )?;
        write(
            "truth.json",
            (serde_json::to_string_pretty(&self.truth()?)? + "\n").as_bytes(),
        )?;
        parallel_map(jobs, self.cfg.images as usize, |i| {
            let img = self.image(i as u32)?;
            img.dump.write(dir.join(&img.manifest.dump_path))?;
            write(
                &format!("{}.json", img.image_id),
                img.manifest.to_json()?.as_bytes(),
            )?;
            write_mask(&img.gt, dir.join(format!("{}_gt.pgm", img.image_id)))?;
            let png = dir.join(format!("{}.png", img.image_id));
            img.image
                .save_with_format(&png, image::ImageFormat::Png)
                .map_err(Error::from)
        })?;
        Ok(())
    }
}

/// A flat cartoon of the scene: sky-to-grass gradient, grey distractor,
/// brown target object.
fn render_scene(r: u32, gt: &Ellipse, distractor: &Ellipse) -> RgbImage {
    let step = 1.0 / r as f64;
    RgbImage::from_fn(r, r, |x, y| {
        let (px, py) = ((x as f64 + 0.5) * step, (y as f64 + 0.5) * step);
        if gt.contains(px, py) {
            Rgb([140, 90, 50])
        } else if distractor.contains(px, py) {
            Rgb([150, 150, 155])
        } else {
            let t = py;
            let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
            Rgb([lerp(120.0, 90.0), lerp(165.0, 140.0), lerp(215.0, 80.0)])
        }
    })
}

/// An aggregation method evaluated by [`run_benchmark`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSpec {
    pub label: String,
    pub selection: HeadSelection,
}

impl MethodSpec {
    pub fn new(selection: HeadSelection) -> Self {
        Self {
            label: selection.label(),
            selection,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkPlan {
    pub methods: Vec<MethodSpec>,
    pub thresholds: Vec<f64>,
    pub target_r: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub votes: VoteAccumulator,
    pub hrvs: Vec<HeadRelevanceVector>,
    pub head_sets: Vec<Option<HeadSet>>,
    pub records: Vec<EvalRecord>,
    pub report: FixtureReport,
}

/// HRV estimation over all fixture images, then every method's mean IoU.
pub fn run_benchmark(fixture: &Fixture, plan: &BenchmarkPlan) -> Result<BenchmarkOutcome> {
    let bank = fixture.concept_bank()?;
    let n = fixture.cfg.images as usize;

    struct Prepared {
        image_id: String,
        maps: HeadMaps,
        tokens: TokenInfo,
        gt: BinaryMask,
        votes: VoteAccumulator,
    }

    let prepared = parallel_map(plan.jobs, n, |i| {
        let img = fixture.image(i as u32)?;
        let mut votes = bank.new_accumulator()?;
        accumulate_votes(&mut votes, &img.dump, &bank)?;
        Ok(Prepared {
            tokens: img.token_info()?,
            maps: head_maps(&img.dump)?,
            image_id: img.image_id,
            gt: img.gt,
            votes,
        })
    })?;

    let mut votes = bank.new_accumulator()?;
    for p in &prepared {
        votes.merge(&p.votes)?;
    }
    let hrvs = finalize_hrv(&votes)?;
    let head_sets = plan
        .methods
        .iter()
        .map(|m| m.selection.resolve(&hrvs, fixture.cfg.heads))
        .collect::<Result<Vec<_>>>()?;

    let per_image = parallel_map(plan.jobs, n, |i| {
        let p = &prepared[i];
        let mut records = Vec::new();
        for (method, set) in plan.methods.iter().zip(&head_sets) {
            let agg = aggregate(&p.maps, set.as_ref(), plan.target_r)?;
            let heat = extract_token_heatmap(&agg, &p.tokens)?;
            let scores = score_heatmap(&heat, &p.gt, &plan.thresholds)?;
            for (&v, iou) in plan.thresholds.iter().zip(scores) {
                records.push(EvalRecord {
                    image_id: p.image_id.clone(),
                    token: p.tokens.target_text(),
                    method: method.label.clone(),
                    threshold: v,
                    iou,
                });
            }
        }
        Ok(records)
    })?;
    let records: Vec<EvalRecord> = per_image.into_iter().flatten().collect();
    let labels: Vec<String> = plan.methods.iter().map(|m| m.label.clone()).collect();
    let report = fixture_report(
        &fixture.truth()?,
        &hrvs,
        &records,
        &labels,
        &plan.thresholds,
    )?;
    Ok(BenchmarkOutcome {
        votes,
        hrvs,
        head_sets,
        records,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub threshold: f64,
    /// Methods' mean IoU strictly decreases in listed order.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub planted: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    pub summary: EvalSummary,
    pub orderings: Vec<OrderingVerdict>,
}

/// Planted-head recovery of the target concept's HRV and per-method mean
/// IoU, with an ordering verdict per threshold.
pub fn fixture_report(
    truth: &FixtureTruth,
    hrvs: &[HeadRelevanceVector],
    records: &[EvalRecord],
    methods: &[String],
    thresholds: &[f64],
) -> Result<FixtureReport> {
    let v = find_concept(hrvs, &truth.target_concept).ok_or_else(|| Error::UnknownConcept {
        name: truth.target_concept.clone(),
        available: hrvs.iter().map(|v| v.concept.clone()).collect(),
    })?;
    if v.heads() != truth.heads {
        return Err(Error::Validation(format!(
            "relevance vectors cover {} heads, fixture has {}",
            v.heads(),
            truth.heads
        )));
    }
    let known: BTreeMap<&str, ()> = truth
        .images
        .iter()
        .map(|i| (i.image_id.as_str(), ()))
        .collect();
    if let Some(r) = records
        .iter()
        .find(|r| !known.contains_key(r.image_id.as_str()))
    {
        return Err(Error::Validation(format!(
            "record for unknown image {}",
            r.image_id
        )));
    }
    let planted = truth.planted()?;
    let recovered = top_k_heads(v, planted.len())?.intersection_len(&planted);
    let summary = summarize(records, methods, thresholds)?;
    let orderings = thresholds
        .iter()
        .map(|&t| {
            let means: Vec<f64> = methods.iter().filter_map(|m| summary.mean(m, t)).collect();
            OrderingVerdict {
                threshold: t,
                holds: means.windows(2).all(|w| w[0] > w[1]),
            }
        })
        .collect();
    Ok(FixtureReport {
        planted: planted.len(),
        recovered,
        recovery_rate: recovered as f64 / planted.len() as f64,
        summary,
        orderings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FixtureConfig {
        FixtureConfig {
            heads: 16,
            timesteps: 2,
            resolutions: vec![4, 8],
            planted: 4,
            images: 2,
            mask_resolution: 16,
            image_resolution: 32,
            ..FixtureConfig::default()
        }
    }

    #[test]
    fn boost_meets_mass_ratio() {
        let b = planted_boost(8, SOT_LOGIT, IN_OUT_MASS_RATIO).unwrap();
        let out_mass = 1.0 / (SOT_LOGIT.exp() + 7.0);
        let in_mass = b.exp() / (b.exp() + SOT_LOGIT.exp() + 6.0);
        assert!((in_mass / out_mass - IN_OUT_MASS_RATIO).abs() < 1e-9);
        assert!(in_mass / out_mass >= 3.0);
        // Concept votes of secondary heads must survive the boost.
        assert!(b * FRAC_1_SQRT_2 < CONCEPT_LOGIT);
        assert!(DISTRACTOR_GAIN.1 * FRAC_1_SQRT_2 < CONCEPT_LOGIT);
        assert!(planted_boost(8, SOT_LOGIT, 1e6).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(small().validate().is_ok());
        let mut c = small();
        c.planted = 16;
        assert!(c.validate().is_err());
        let mut c = small();
        c.d_k = 8;
        assert!(c.validate().is_err());
        let mut c = small();
        c.resolutions = vec![32];
        assert!(c.validate().is_err());
        let mut c = small();
        c.noise = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let b = orthonormal_basis(&mut rng, 12, 16);
        for i in 0..12 {
            for j in 0..12 {
                let dot: f64 = (0..16).map(|k| b[i * 16 + k] * b[j * 16 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regions_are_disjoint_and_sized() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        for _ in 0..20 {
            let (gt, d) = Fixture::regions(&mut rng).unwrap();
            let (a, b) = (gt.mask(64), d.mask(64));
            assert_eq!(
                a.bits()
                    .iter()
                    .zip(b.bits())
                    .filter(|(x, y)| **x && **y)
                    .count(),
                0
            );
            let frac = a.count() as f64 / 4096.0;
            assert!((0.08..=0.42).contains(&frac), "{frac}");
        }
    }

    #[test]
    fn images_are_reproducible() {
        let f = generate_fixture(&small()).unwrap();
        let a = f.image(1).unwrap();
        let b = generate_fixture(&small()).unwrap().image(1).unwrap();
        assert_eq!(a.dump.to_bytes(), b.dump.to_bytes());
        assert_eq!(a.gt, b.gt);
        assert_ne!(f.image(0).unwrap().dump.to_bytes(), a.dump.to_bytes());
        assert!(f.image(2).is_err());
    }

    #[test]
    fn noiseless_votes_follow_roles() {
        let cfg = FixtureConfig {
            noise: 0.0,
            ..small()
        };
        let f = generate_fixture(&cfg).unwrap();
        let bank = f.concept_bank().unwrap();
        let mut acc = bank.new_accumulator().unwrap();
        for i in 0..cfg.images {
            accumulate_votes(&mut acc, &f.image(i).unwrap().dump, &bank).unwrap();
        }
        let per_head = (cfg.images * cfg.timesteps) as u64;
        for (h, head) in f.heads.iter().enumerate() {
            assert_eq!(
                acc.count(head.role.concept(), h as u32),
                per_head,
                "head {h}"
            );
        }
    }

    #[test]
    fn truth_matches_images() {
        let f = generate_fixture(&small()).unwrap();
        let truth = f.truth().unwrap();
        assert_eq!(truth.planted_head_ids.len(), 4);
        let img = f.image(1).unwrap();
        assert_eq!(truth.images[1].gt_region, img.gt_region);
        assert_eq!(img.manifest.token_strings[TARGET_TOKEN], "bird");
    }

    #[test]
    fn report_rejects_unknown_images() {
        let f = generate_fixture(&small()).unwrap();
        let truth = f.truth().unwrap();
        let hrvs = vec![HeadRelevanceVector {
            concept: "animals".into(),
            weights: vec![1.0 / 16.0; 16],
            degenerate: false,
        }];
        let rec = EvalRecord {
            image_id: "nope".into(),
            token: "x".into(),
            method: "all".into(),
            threshold: 0.4,
            iou: 0.5,
        };
        assert!(fixture_report(&truth, &hrvs, &[rec], &["all".into()], &[0.4]).is_err());
    }
}
