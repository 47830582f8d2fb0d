// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-attention analysis for text-to-image diffusion models.
//!
//! The crate computes per-head attention maps from dumped queries and keys,
//! aggregates them into token heatmaps (over every head, or over heads chosen
//! by a head relevance vector), and scores the heatmaps against ground-truth
//! masks. Dumps use the ATND container described in [`io::atnd`].

pub mod aggregation;
pub mod attention;
pub mod error;
pub mod hrv;
pub mod io;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod seg_eval;
pub mod synthetic;

pub use aggregation::{
    aggregate_daam, aggregate_selective, extract_token_heatmap, time_average, AggregatedMap,
    HeadMaps, HeadSet, TokenHeatmap, DEFAULT_TARGET_RESOLUTION, MAX_TARGET_RESOLUTION,
};
pub use attention::{
    compute_attention_map, softmax_rows, AttentionMap, KeyMatrix, Matrix, QueryMatrix, TokenInfo,
};
pub use error::{Error, Result};
pub use hrv::{
    bottom_k_heads, finalize_hrv, find_concept, hrv_attention, spatial_mean, top_k_heads,
    ConceptKeySet, HeadRelevanceVector, RelevanceScore, VoteAccumulator, DEFAULT_TOP_K,
};
pub use io::{AtndError, AtndFile, AtndHeader, ContentKind, HeadBlock};
pub use pipeline::{ConceptKeyBank, HeadSelection};
pub use resample::{bicubic_upscale, cubic_kernel, resize_bicubic};
pub use seg_eval::{
    iou, mean_iou, score_heatmap, threshold_mask, BinaryMask, EvalRecord, EvalSummary,
    DEFAULT_THRESHOLDS,
};

/// Version of the ATND container this build reads and writes.
pub const ATND_FORMAT_VERSION: u16 = io::atnd::VERSION;
