// SPDX-License-Identifier: MIT OR Apache-2.0

//! Head relevance vectors.
//!
//! Each head's queries attend over key-projected concept-word embeddings.
//! The spatial mean of that map scores every concept; the best-scoring
//! concept receives one vote for the head. Vote counts per concept are
//! finally L1-normalized over heads.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::aggregation::HeadSet;
use crate::attention::{scaled_logits, softmax_rows, AttentionMap, Matrix, QueryMatrix};
use crate::error::{Error, Result};

/// Number of heads selected by default (best setting of the head-count ablation).
pub const DEFAULT_TOP_K: usize = 30;

/// Key-projected concept-word embeddings `N × d_k` for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptKeySet {
    pub head_id: u32,
    names: Vec<String>,
    values: Matrix,
}

impl ConceptKeySet {
    pub fn new(head_id: u32, names: Vec<String>, values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Validation(
                "concept key set needs at least one concept and d_k >= 1".into(),
            ));
        }
        if names.len() != values.rows() {
            return Err(Error::Shape(format!(
                "{} concept names for {} key rows",
                names.len(),
                values.rows()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Validation(format!(
                "concept keys for head {head_id} contain non-finite values"
            )));
        }
        Ok(Self {
            head_id,
            names,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn concept_count(&self) -> usize {
        self.values.rows()
    }

    pub fn d_k(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Spatially averaged concept attention of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScore {
    pub head_id: u32,
    pub scores: Vec<f64>,
}

impl RelevanceScore {
    /// Index of the best concept; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate().skip(1) {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Concept attention `softmax(Q·K̃ᵀ / sqrt(d_k))`, shape `r_h² × N`.
pub fn hrv_attention(q: &QueryMatrix, keys: &ConceptKeySet) -> Result<AttentionMap> {
    if q.head_id != keys.head_id {
        return Err(Error::Validation(format!(
            "query is for head {} but concept keys are for head {}",
            q.head_id, keys.head_id
        )));
    }
    if q.d_k() != keys.d_k() {
        return Err(Error::Shape(format!(
            "query (head {}, t={}) has d_k = {} but concept keys have d_k = {}",
            q.head_id,
            q.timestep,
            q.d_k(),
            keys.d_k()
        )));
    }
    let probs = softmax_rows(&scaled_logits(q.values(), &keys.values)?)?;
    Ok(AttentionMap::from_parts_unchecked(
        q.head_id,
        q.timestep,
        q.resolution(),
        probs,
    ))
}

/// Column means over all spatial rows.
pub fn spatial_mean(m: &AttentionMap) -> RelevanceScore {
    let values = m.values();
    let mut scores = vec![0.0; values.cols()];
    for i in 0..values.rows() {
        for (s, v) in scores.iter_mut().zip(values.row(i)) {
            *s += v;
        }
    }
    let n = values.rows() as f64;
    for s in &mut scores {
        *s /= n;
    }
    RelevanceScore {
        head_id: m.head_id,
        scores,
    }
}

/// Per-concept, per-head vote counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteAccumulator {
    concepts: Vec<String>,
    heads: u32,
    counts: Vec<u64>,
    total_votes: u64,
}

impl VoteAccumulator {
    pub fn new(concepts: Vec<String>, heads: u32) -> Result<Self> {
        if concepts.is_empty() || heads == 0 {
            return Err(Error::Validation(
                "vote accumulator needs at least one concept and one head".into(),
            ));
        }
        let n = concepts.len();
        Ok(Self {
            concepts,
            heads,
            counts: vec![0; n * heads as usize],
            total_votes: 0,
        })
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn heads(&self) -> u32 {
        self.heads
    }

    pub fn total_votes(&self) -> u64 {
        self.total_votes
    }

    pub fn count(&self, concept: usize, head: u32) -> u64 {
        self.counts[concept * self.heads as usize + head as usize]
    }

    /// Votes recorded for `head` across all concepts.
    pub fn head_total(&self, head: u32) -> u64 {
        (0..self.concepts.len()).map(|c| self.count(c, head)).sum()
    }

    /// One vote for the best concept of `score`.
    pub fn accumulate(&mut self, score: &RelevanceScore) -> Result<()> {
        if score.scores.len() != self.concepts.len() {
            return Err(Error::Shape(format!(
                "relevance score has {} concepts, accumulator has {}",
                score.scores.len(),
                self.concepts.len()
            )));
        }
        if score.head_id >= self.heads {
            return Err(Error::Validation(format!(
                "head {} out of range for {} heads",
                score.head_id, self.heads
            )));
        }
        let idx = score.argmax() * self.heads as usize + score.head_id as usize;
        self.counts[idx] += 1;
        self.total_votes += 1;
        Ok(())
    }

    /// Adds another accumulator's counts. Order of merging does not matter.
    pub fn merge(&mut self, other: &VoteAccumulator) -> Result<()> {
        if other.concepts != self.concepts || other.heads != self.heads {
            return Err(Error::Shape(
                "cannot merge accumulators over different concepts or head counts".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_votes += other.total_votes;
        Ok(())
    }
}

/// L1-normalized relevance of every head to one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadRelevanceVector {
    pub concept: String,
    pub weights: Vec<f64>,
    /// The concept never won a vote; `weights` is all zero.
    pub degenerate: bool,
}

impl HeadRelevanceVector {
    pub fn heads(&self) -> u32 {
        self.weights.len() as u32
    }
}

/// Normalizes each concept's vote row to unit L1 norm.
pub fn finalize_hrv(acc: &VoteAccumulator) -> Result<Vec<HeadRelevanceVector>> {
    if acc.total_votes == 0 {
        return Err(Error::EmptyAccumulator);
    }
    let h = acc.heads as usize;
    Ok(acc
        .concepts
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let row = &acc.counts[c * h..(c + 1) * h];
            let total: u64 = row.iter().sum();
            let weights = if total == 0 {
                vec![0.0; h]
            } else {
                row.iter().map(|&n| n as f64 / total as f64).collect()
            };
            HeadRelevanceVector {
                concept: name.clone(),
                weights,
                degenerate: total == 0,
            }
        })
        .collect())
}

fn ranked(v: &HeadRelevanceVector, k: usize, descending: bool) -> Result<HeadSet> {
    let h = v.weights.len();
    if k == 0 || k > h {
        return Err(Error::Validation(format!(
            "k = {k} outside 1..={h} for concept {}",
            v.concept
        )));
    }
    let mut order: Vec<u32> = (0..h as u32).collect();
    order.sort_by(|&a, &b| {
        let (wa, wb) = (v.weights[a as usize], v.weights[b as usize]);
        let by_weight = if descending {
            wb.total_cmp(&wa)
        } else {
            wa.total_cmp(&wb)
        };
        by_weight.then(a.cmp(&b))
    });
    order.truncate(k);
    HeadSet::new(order, h as u32)
}

/// The `k` heads with the largest weights; ties go to the lowest head id.
pub fn top_k_heads(v: &HeadRelevanceVector, k: usize) -> Result<HeadSet> {
    ranked(v, k, true)
}

/// The `k` heads with the smallest weights; ties go to the lowest head id.
pub fn bottom_k_heads(v: &HeadRelevanceVector, k: usize) -> Result<HeadSet> {
    ranked(v, k, false)
}

/// Looks up a concept by name.
pub fn find_concept<'a>(
    hrvs: &'a [HeadRelevanceVector],
    concept: &str,
) -> Option<&'a HeadRelevanceVector> {
    hrvs.iter().find(|v| v.concept == concept)
}

/// Serializes `{concept: [weights]}` with sorted keys and 17 significant digits.
pub fn to_json(hrvs: &[HeadRelevanceVector]) -> Result<String> {
    let sorted: BTreeMap<&str, &HeadRelevanceVector> =
        hrvs.iter().map(|v| (v.concept.as_str(), v)).collect();
    if sorted.len() != hrvs.len() {
        return Err(Error::Validation("duplicate concept names".into()));
    }
    let mut out = String::from("{");
    for (i, (name, v)) in sorted.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("\n  ");
        out.push_str(&serde_json::to_string(name)?);
        out.push_str(": [");
        for (j, w) in v.weights.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{w:.16e}");
        }
        out.push(']');
    }
    out.push_str("\n}\n");
    Ok(out)
}

/// Parses the document written by [`to_json`].
pub fn from_json(text: &str) -> Result<Vec<HeadRelevanceVector>> {
    let parsed: BTreeMap<String, Vec<f64>> = serde_json::from_str(text)?;
    let mut heads = None;
    let mut out = Vec::with_capacity(parsed.len());
    for (concept, weights) in parsed {
        if *heads.get_or_insert(weights.len()) != weights.len() {
            return Err(Error::Format(format!(
                "concept {concept} has {} weights, expected {}",
                weights.len(),
                heads.unwrap_or(0)
            )));
        }
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Format(format!(
                "concept {concept} has empty, negative or non-finite weights"
            )));
        }
        let degenerate = weights.iter().all(|&w| w == 0.0);
        out.push(HeadRelevanceVector {
            concept,
            weights,
            degenerate,
        });
    }
    Ok(out)
}
