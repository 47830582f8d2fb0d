// SPDX-License-Identifier: MIT OR Apache-2.0

//! Time averaging, per-head bicubic upscaling and head averaging.
//!
//! Both aggregation routes average the time-averaged map of each head
//! after upscaling it to the target resolution. The all-heads route uses
//! every head; the selective route only a chosen [`HeadSet`]. Heads are
//! always reduced in ascending id order so results are bit-reproducible.

use std::collections::BTreeMap;

use crate::attention::{AttentionMap, Matrix, TokenInfo};
use crate::error::{Error, Result};
use crate::resample::bicubic_upscale;

/// Latent resolution of Stable Diffusion v1.
pub const DEFAULT_TARGET_RESOLUTION: usize = 64;
pub const MAX_TARGET_RESOLUTION: usize = 512;

/// An `r × r × S` token heatmap stack, stored pixel-major (`r²` rows of `S`).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMap {
    resolution: usize,
    tokens: usize,
    values: Vec<f64>,
}

impl AggregatedMap {
    pub fn new(resolution: usize, tokens: usize, values: Vec<f64>) -> Result<Self> {
        if resolution == 0 || tokens == 0 {
            return Err(Error::Validation(
                "aggregated map needs resolution >= 1 and at least one token".into(),
            ));
        }
        if values.len() != resolution * resolution * tokens {
            return Err(Error::Shape(format!(
                "aggregated map {resolution}x{resolution}x{tokens} needs {} values, got {}",
                resolution * resolution * tokens,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "aggregated map entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            resolution,
            tokens,
            values,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn token_count(&self) -> usize {
        self.tokens
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, token: usize) -> f64 {
        self.values[(y * self.resolution + x) * self.tokens + token]
    }

    /// The `r × r` slice for one token, row-major.
    pub fn token_slice(&self, token: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(token)
            .step_by(self.tokens)
            .copied()
            .collect()
    }
}

/// Distinct head ids in ascending order, drawn from `0..total`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeadSet {
    ids: Vec<u32>,
    total: u32,
}

impl HeadSet {
    pub fn new(ids: impl IntoIterator<Item = u32>, total: u32) -> Result<Self> {
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        if ids.is_empty() {
            return Err(Error::Validation("head set is empty".into()));
        }
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "head set {ids:?} has duplicates"
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&h| h >= total) {
            return Err(Error::Validation(format!(
                "head {bad} out of range for {total} heads"
            )));
        }
        Ok(Self { ids, total })
    }

    pub fn all(total: u32) -> Result<Self> {
        Self::new(0..total, total)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, head: u32) -> bool {
        self.ids.binary_search(&head).is_ok()
    }

    pub fn intersection_len(&self, other: &HeadSet) -> usize {
        self.ids.iter().filter(|&&h| other.contains(h)).count()
    }
}

/// Time-averaged maps keyed by head id, plus the model's head count.
#[derive(Debug, Clone, Default)]
pub struct HeadMaps {
    total_heads: u32,
    maps: BTreeMap<u32, AttentionMap>,
}

impl HeadMaps {
    pub fn new(total_heads: u32) -> Self {
        Self {
            total_heads,
            maps: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, map: AttentionMap) -> Result<()> {
        if map.head_id >= self.total_heads {
            return Err(Error::Validation(format!(
                "head {} out of range for {} heads",
                map.head_id, self.total_heads
            )));
        }
        if let Some(first) = self.maps.values().next() {
            if first.token_count() != map.token_count() {
                return Err(Error::Shape(format!(
                    "head {} has {} tokens, expected {}",
                    map.head_id,
                    map.token_count(),
                    first.token_count()
                )));
            }
        }
        self.maps.insert(map.head_id, map);
        Ok(())
    }

    pub fn total_heads(&self) -> u32 {
        self.total_heads
    }

    pub fn get(&self, head: u32) -> Option<&AttentionMap> {
        self.maps.get(&head)
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttentionMap> {
        self.maps.values()
    }
}

/// A max-normalized `r × r` heatmap for one target word.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenHeatmap {
    resolution: usize,
    values: Vec<f64>,
}

impl TokenHeatmap {
    /// Scales `raw` so its maximum is 1. A non-positive maximum yields zeros.
    pub fn normalized(resolution: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "heatmap at resolution {resolution} needs {} values, got {}",
                resolution * resolution,
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("heatmap has non-finite values".into()));
        }
        let max = raw.iter().copied().fold(0.0f64, f64::max);
        let values = if max > 0.0 {
            raw.into_iter().map(|v| (v / max).max(0.0)).collect()
        } else {
            vec![0.0; resolution * resolution]
        };
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Bicubic upscale followed by re-normalization to a unit maximum.
    pub fn upscale_to(&self, target_r: usize) -> Result<Self> {
        if target_r == self.resolution {
            return Ok(self.clone());
        }
        let up = bicubic_upscale(&self.values, self.resolution, target_r)?;
        Self::normalized(target_r, up)
    }
}

/// Elementwise mean over the timesteps of one head.
pub fn time_average(maps: &[AttentionMap]) -> Result<AttentionMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Validation("no timesteps to average".into()))?;
    for m in &maps[1..] {
        if m.head_id != first.head_id {
            return Err(Error::Validation(format!(
                "time average mixes heads {} and {}",
                first.head_id, m.head_id
            )));
        }
        if m.resolution() != first.resolution() || m.token_count() != first.token_count() {
            return Err(Error::Shape(format!(
                "head {}: timestep {} is {}²x{}, expected {}²x{}",
                m.head_id,
                m.timestep,
                m.resolution(),
                m.token_count(),
                first.resolution(),
                first.token_count()
            )));
        }
    }
    if maps.len() == 1 {
        let mut only = first.clone();
        only.timestep = 0;
        return Ok(only);
    }
    let mut sum = first.values().as_slice().to_vec();
    for m in &maps[1..] {
        for (s, v) in sum.iter_mut().zip(m.values().as_slice()) {
            *s += v;
        }
    }
    let n = maps.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    let values = Matrix::new(first.values().rows(), first.values().cols(), sum)?;
    Ok(AttentionMap::from_parts_unchecked(
        first.head_id,
        0,
        first.resolution(),
        values,
    ))
}

fn aggregate_over(maps: &HeadMaps, ids: &[u32], target_r: usize) -> Result<AggregatedMap> {
    if target_r == 0 || target_r > MAX_TARGET_RESOLUTION {
        return Err(Error::Validation(format!(
            "target resolution {target_r} outside 1..={MAX_TARGET_RESOLUTION}"
        )));
    }
    let missing: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|h| maps.get(*h).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingHeads(missing));
    }
    let tokens = maps
        .get(ids[0])
        .map(AttentionMap::token_count)
        .ok_or_else(|| Error::MissingHeads(vec![ids[0]]))?;

    let mut acc = vec![0.0; target_r * target_r * tokens];
    for &h in ids {
        let map = &maps.maps[&h];
        for s in 0..tokens {
            let up = bicubic_upscale(&map.values().column(s), map.resolution(), target_r)?;
            for (p, v) in up.into_iter().enumerate() {
                acc[p * tokens + s] += v.min(1.0);
            }
        }
    }
    let n = ids.len() as f64;
    for v in &mut acc {
        *v /= n;
    }
    AggregatedMap::new(target_r, tokens, acc)
}

/// Equal-weight average over every head of the model.
pub fn aggregate_daam(maps: &HeadMaps, target_r: usize) -> Result<AggregatedMap> {
    let missing: Vec<u32> = (0..maps.total_heads)
        .filter(|h| !maps.maps.contains_key(h))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingHeads(missing));
    }
    let ids: Vec<u32> = maps.maps.keys().copied().collect();
    if ids.is_empty() {
        return Err(Error::Validation("no heads to aggregate".into()));
    }
    aggregate_over(maps, &ids, target_r)
}

/// Equal-weight average over the heads in `heads` only.
pub fn aggregate_selective(
    maps: &HeadMaps,
    heads: &HeadSet,
    target_r: usize,
) -> Result<AggregatedMap> {
    if heads.total() != maps.total_heads {
        return Err(Error::Validation(format!(
            "head set is over {} heads but the dump has {}",
            heads.total(),
            maps.total_heads
        )));
    }
    aggregate_over(maps, heads.ids(), target_r)
}

/// Mean of the target word's token slices, max-normalized.
pub fn extract_token_heatmap(agg: &AggregatedMap, tokens: &TokenInfo) -> Result<TokenHeatmap> {
    if tokens.tokens().len() != agg.tokens {
        return Err(Error::Shape(format!(
            "prompt has {} tokens but the aggregated map has {}",
            tokens.tokens().len(),
            agg.tokens
        )));
    }
    let r2 = agg.resolution * agg.resolution;
    let mut mean = vec![0.0; r2];
    for &s in tokens.targets() {
        for (m, v) in mean
            .iter_mut()
            .zip(agg.values.iter().skip(s).step_by(agg.tokens))
        {
            *m += v;
        }
    }
    let n = tokens.targets().len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    TokenHeatmap::normalized(agg.resolution, mean)
}
