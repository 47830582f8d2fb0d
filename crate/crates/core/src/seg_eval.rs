// SPDX-License-Identifier: MIT OR Apache-2.0

//! Thresholding, intersection-over-union and benchmark summaries.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{extract_token_heatmap, AggregatedMap, TokenHeatmap};
use crate::attention::TokenInfo;
use crate::error::{Error, Result};

/// Thresholds used by the segmentation benchmark.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.3, 0.4, 0.5];

/// Square boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    resolution: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(resolution: usize, bits: Vec<bool>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Validation("mask resolution must be >= 1".into()));
        }
        if bits.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "mask at resolution {resolution} needs {} pixels, got {}",
                resolution * resolution,
                bits.len()
            )));
        }
        Ok(Self { resolution, bits })
    }

    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            bits: vec![false; resolution * resolution],
        }
    }

    pub fn from_fn(resolution: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..resolution * resolution)
            .map(|i| f(i / resolution, i % resolution))
            .collect();
        Self { resolution, bits }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.resolution + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.resolution == other.resolution
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

fn check_threshold(v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("threshold {v} outside (0, 1)")))
    }
}

/// Pixels whose heatmap value is at least `v`.
pub fn threshold_mask(h: &TokenHeatmap, v: f64) -> Result<BinaryMask> {
    check_threshold(v)?;
    BinaryMask::new(h.resolution(), h.values().iter().map(|&x| x >= v).collect())
}

/// `|a ∧ b| / |a ∨ b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::Shape(format!(
            "mask resolutions differ: {} vs {}",
            a.resolution, b.resolution
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// One IoU measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub token: String,
    pub method: String,
    pub threshold: f64,
    pub iou: f64,
}

/// Mean IoU over records at threshold `v`, summed in `image_id` order.
pub fn mean_iou(records: &[EvalRecord], v: f64) -> Result<f64> {
    let mut selected: Vec<&EvalRecord> = records.iter().filter(|r| r.threshold == v).collect();
    if selected.is_empty() {
        return Err(Error::Validation(format!("no records at threshold {v}")));
    }
    selected.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.method.cmp(&b.method)));
    let sum: f64 = selected.iter().map(|r| r.iou).sum();
    Ok(sum / selected.len() as f64)
}

/// Thresholds a heatmap at every `v` and scores it against `gt`.
///
/// Heatmaps coarser than the ground truth are upscaled first; finer ones
/// are rejected.
pub fn score_heatmap(
    heatmap: &TokenHeatmap,
    gt: &BinaryMask,
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    let heatmap = match heatmap.resolution() {
        r if r == gt.resolution() => heatmap.clone(),
        r if r < gt.resolution() => heatmap.upscale_to(gt.resolution())?,
        r => {
            return Err(Error::Shape(format!(
                "heatmap resolution {r} exceeds ground-truth resolution {}",
                gt.resolution()
            )))
        }
    };
    thresholds
        .iter()
        .map(|&v| iou(&threshold_mask(&heatmap, v)?, gt))
        .collect()
}

/// Per-threshold IoU of two aggregated maps against one ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub thresholds: Vec<f64>,
    pub iou_a: Vec<f64>,
    pub iou_b: Vec<f64>,
    /// `iou_a - iou_b` per threshold.
    pub delta: Vec<f64>,
}

pub fn evaluate_pair(
    agg_a: &AggregatedMap,
    agg_b: &AggregatedMap,
    tokens: &TokenInfo,
    gt: &BinaryMask,
    thresholds: &[f64],
) -> Result<PairReport> {
    for &v in thresholds {
        check_threshold(v)?;
    }
    let iou_a = score_heatmap(&extract_token_heatmap(agg_a, tokens)?, gt, thresholds)?;
    let iou_b = score_heatmap(&extract_token_heatmap(agg_b, tokens)?, gt, thresholds)?;
    let delta = iou_a.iter().zip(&iou_b).map(|(a, b)| a - b).collect();
    Ok(PairReport {
        thresholds: thresholds.to_vec(),
        iou_a,
        iou_b,
        delta,
    })
}

/// Key used for thresholds in summary documents, e.g. `"0.4"`.
pub fn threshold_key(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub images: usize,
    pub mean_iou: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub method: String,
    pub baseline: String,
    pub delta: BTreeMap<String, f64>,
}

/// Mean IoU per method and threshold. The first method is the reference
/// for deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub thresholds: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub deltas: Vec<DeltaSummary>,
}

impl EvalSummary {
    pub fn mean(&self, method: &str, v: f64) -> Option<f64> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .and_then(|m| m.mean_iou.get(&threshold_key(v)).copied())
    }
}

/// Summarizes records for `methods` (in the given order).
///
/// Deltas are `methods[0] - methods[j]` for every `j > 0`.
pub fn summarize(
    records: &[EvalRecord],
    methods: &[String],
    thresholds: &[f64],
) -> Result<EvalSummary> {
    let mut summaries = Vec::with_capacity(methods.len());
    for method in methods {
        let own: Vec<EvalRecord> = records
            .iter()
            .filter(|r| &r.method == method)
            .cloned()
            .collect();
        let mut mean = BTreeMap::new();
        for &v in thresholds {
            mean.insert(threshold_key(v), mean_iou(&own, v)?);
        }
        let mut images: Vec<&str> = own.iter().map(|r| r.image_id.as_str()).collect();
        images.sort_unstable();
        images.dedup();
        summaries.push(MethodSummary {
            method: method.clone(),
            images: images.len(),
            mean_iou: mean,
        });
    }
    let deltas = summaries
        .iter()
        .skip(1)
        .map(|other| DeltaSummary {
            method: summaries[0].method.clone(),
            baseline: other.method.clone(),
            delta: summaries[0]
                .mean_iou
                .iter()
                .map(|(k, v)| (k.clone(), v - other.mean_iou[k]))
                .collect(),
        })
        .collect();
    Ok(EvalSummary {
        thresholds: thresholds.to_vec(),
        methods: summaries,
        deltas,
    })
}

/// Writes `image_id,token,method,threshold,iou` rows.
pub fn write_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "token", "method", "threshold", "iou"])?;
    for r in records {
        w.write_record([
            r.image_id.as_str(),
            r.token.as_str(),
            r.method.as_str(),
            &threshold_key(r.threshold),
            &format!("{}", r.iou),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(values: &[f64]) -> TokenHeatmap {
        let r = (values.len() as f64).sqrt() as usize;
        TokenHeatmap::normalized(r, values.to_vec()).unwrap()
    }

    fn rec(id: &str, v: f64, iou: f64) -> EvalRecord {
        EvalRecord {
            image_id: id.into(),
            token: "dog".into(),
            method: "m".into(),
            threshold: v,
            iou,
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let h = heat(&[0.2, 0.5, 0.9, 1.0]);
        let m = threshold_mask(&h, 0.5).unwrap();
        assert_eq!(m.bits(), &[false, true, true, true]);
    }

    #[test]
    fn zero_heatmap_gives_empty_mask() {
        let m = threshold_mask(&heat(&[0.0; 4]), 0.3).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn threshold_range_checked() {
        let h = heat(&[1.0]);
        assert!(threshold_mask(&h, 0.0).is_err());
        assert!(threshold_mask(&h, 1.0).is_err());
        assert!(threshold_mask(&h, f64::NAN).is_err());
    }

    #[test]
    fn iou_examples() {
        let top = BinaryMask::from_fn(8, |y, _| y < 4);
        let left = BinaryMask::from_fn(8, |_, x| x < 4);
        assert_eq!(iou(&top, &top).unwrap(), 1.0);
        assert_eq!(
            iou(&top, &BinaryMask::from_fn(8, |y, _| y >= 4)).unwrap(),
            0.0
        );
        assert_eq!(iou(&top, &left).unwrap(), 16.0 / 48.0);
        assert_eq!(
            iou(&BinaryMask::empty(3), &BinaryMask::empty(3)).unwrap(),
            1.0
        );
        assert_eq!(iou(&BinaryMask::empty(8), &top).unwrap(), 0.0);
        assert!(iou(&BinaryMask::empty(3), &BinaryMask::empty(4)).is_err());
    }

    #[test]
    fn mean_iou_examples() {
        assert_eq!(mean_iou(&[rec("a", 0.4, 0.6)], 0.4).unwrap(), 0.6);
        assert_eq!(
            mean_iou(
                &[rec("b", 0.4, 1.0), rec("a", 0.4, 0.5), rec("a", 0.3, 0.0)],
                0.4
            )
            .unwrap(),
            0.75
        );
        assert!(mean_iou(&[rec("a", 0.3, 0.5)], 0.4).is_err());
    }

    #[test]
    fn identical_maps_have_zero_delta() {
        let agg = AggregatedMap::new(2, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.1, 0.9]).unwrap();
        let tokens = TokenInfo::new(vec!["a".into(), "b".into()], vec![1]).unwrap();
        let gt = BinaryMask::new(2, vec![false, true, false, true]).unwrap();
        let rep = evaluate_pair(&agg, &agg, &tokens, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert!(rep.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn empty_gt_with_prediction_scores_zero() {
        let agg = AggregatedMap::new(2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let tokens = TokenInfo::new(vec!["a".into()], vec![0]).unwrap();
        let gt = BinaryMask::empty(2);
        let rep = evaluate_pair(&agg, &agg, &tokens, &gt, &[0.5]).unwrap();
        assert_eq!(rep.iou_a, vec![0.0]);
    }

    #[test]
    fn coarse_heatmap_upscaled_to_gt() {
        let h = heat(&[1.0, 0.0, 0.0, 0.0]);
        let gt = BinaryMask::from_fn(8, |y, x| y < 4 && x < 4);
        let scores = score_heatmap(&h, &gt, &[0.5]).unwrap();
        assert!(scores[0] > 0.5);
        let fine = heat(&[0.5; 64]);
        assert!(score_heatmap(&fine, &BinaryMask::empty(4), &[0.5]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[rec("img,1", 0.3, 0.25)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "image_id,token,method,threshold,iou\n\"img,1\",dog,m,0.3,0.25\n"
        );
    }

    #[test]
    fn summary_deltas_against_first_method() {
        let mut records = Vec::new();
        for (m, iou) in [("ours", 0.8), ("daam", 0.6)] {
            for v in DEFAULT_THRESHOLDS {
                records.push(EvalRecord {
                    method: m.into(),
                    ..rec("a", v, iou)
                });
            }
        }
        let s = summarize(
            &records,
            &["ours".into(), "daam".into()],
            &DEFAULT_THRESHOLDS,
        )
        .unwrap();
        assert_eq!(s.mean("ours", 0.4), Some(0.8));
        assert!((s.deltas[0].delta["0.4"] - 0.2).abs() < 1e-12);
        assert_eq!(s.deltas[0].baseline, "daam");
    }
}
