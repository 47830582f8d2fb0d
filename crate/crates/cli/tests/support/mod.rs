// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

//! Reference implementations written independently of `headlens-core`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Softmax of `q · kᵀ / sqrt(d)` accumulated in the textbook way.
pub fn naive_attention(q: &[f64], k: &[f64], rows: usize, tokens: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * tokens);
    for i in 0..rows {
        let logits: Vec<f64> = (0..tokens)
            .map(|j| (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

/// Catmull-Rom weights for the four taps around fractional offset `t`,
/// from the spline's basis-matrix form.
fn spline_weights(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Direct 2D bicubic upscale: half-pixel centers, replicated edges,
/// negatives clamped to zero.
pub fn reference_upscale(src: &[f64], r: usize, target: usize) -> Vec<f64> {
    if r == target {
        return src.to_vec();
    }
    let at = |y: i64, x: i64| {
        let c = |v: i64| v.clamp(0, r as i64 - 1) as usize;
        src[c(y) * r + c(x)]
    };
    let mut out = vec![0.0; target * target];
    for oy in 0..target {
        // (o + 0.5) * r / target - 0.5, kept in rationals until the end.
        let sy = ((2 * oy + 1) * r) as f64 / (2 * target) as f64 - 0.5;
        let (by, ty) = (sy.floor() as i64, sy - sy.floor());
        let wy = spline_weights(ty);
        for ox in 0..target {
            let sx = ((2 * ox + 1) * r) as f64 / (2 * target) as f64 - 0.5;
            let (bx, tx) = (sx.floor() as i64, sx - sx.floor());
            let wx = spline_weights(tx);
            let mut acc = 0.0;
            for (i, wyi) in wy.iter().enumerate() {
                for (j, wxj) in wx.iter().enumerate() {
                    acc += wyi * wxj * at(by - 1 + i as i64, bx - 1 + j as i64);
                }
            }
            out[oy * target + ox] = acc.max(0.0);
        }
    }
    out
}

/// IoU by counting pixels; two empty masks score 1.
pub fn brute_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for i in 0..a.len() {
        if a[i] && b[i] {
            inter += 1;
        }
        if a[i] || b[i] {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Top `k` heads by weight; ties go to the lower head id.
pub fn reference_top_k(weights: &[f64], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..weights.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        weights[b as usize]
            .partial_cmp(&weights[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut top = ids[..k].to_vec();
    top.sort_unstable();
    top
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_headlens"))
}

/// Runs the CLI with a clean `HEADLENS_*` environment.
pub fn headlens(args: &[&str]) -> Output {
    let mut cmd = Command::new(bin());
    for (k, _) in std::env::vars() {
        if k.starts_with("HEADLENS_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().expect("headlens binary runs")
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}
