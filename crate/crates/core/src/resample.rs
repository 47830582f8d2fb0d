// SPDX-License-Identifier: MIT OR Apache-2.0

//! Separable bicubic resampling with the Catmull-Rom kernel (`a = -0.5`).
//!
//! Coordinates use half-pixel centers: destination pixel `x` samples the
//! source at `(x + 0.5) * src / dst - 0.5`. Out-of-range taps replicate the
//! nearest edge pixel.

use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn axis_taps(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let last = src as isize - 1;
    (0..dst)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            let base = center.floor();
            let t = center - base;
            let base = base as isize;
            let mut index = [0usize; 4];
            let mut weight = [0f64; 4];
            for (k, off) in (-1isize..=2).enumerate() {
                index[k] = (base + off).clamp(0, last) as usize;
                weight[k] = cubic_kernel(t - off as f64);
            }
            Taps { index, weight }
        })
        .collect()
}

/// Resizes a row-major `src_w × src_h` grid to `dst_w × dst_h`.
///
/// No clamping is applied; Catmull-Rom may overshoot near sharp edges.
/// The kernel is not widened when shrinking.
pub fn resize_bicubic(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Result<Vec<f64>> {
    if src_w == 0 || src_h == 0 || dst_w == 0 || dst_h == 0 {
        return Err(Error::Validation("resize dimensions must be >= 1".into()));
    }
    if src.len() != src_w * src_h {
        return Err(Error::Shape(format!(
            "grid {src_w}x{src_h} needs {} values, got {}",
            src_w * src_h,
            src.len()
        )));
    }
    let xs = axis_taps(src_w, dst_w);
    let ys = axis_taps(src_h, dst_h);

    let mut horizontal = vec![0.0; src_h * dst_w];
    for y in 0..src_h {
        let row = &src[y * src_w..(y + 1) * src_w];
        let out = &mut horizontal[y * dst_w..(y + 1) * dst_w];
        for (o, taps) in out.iter_mut().zip(&xs) {
            *o = (0..4).map(|k| taps.weight[k] * row[taps.index[k]]).sum();
        }
    }

    let mut out = vec![0.0; dst_h * dst_w];
    for (y, taps) in ys.iter().enumerate() {
        let dst_row = &mut out[y * dst_w..(y + 1) * dst_w];
        for k in 0..4 {
            let w = taps.weight[k];
            let src_row = &horizontal[taps.index[k] * dst_w..(taps.index[k] + 1) * dst_w];
            for (o, v) in dst_row.iter_mut().zip(src_row) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Upscales a square `r_h × r_h` map to `target_r × target_r`.
///
/// Negative overshoot is clamped to 0. Equal sizes return the input
/// unchanged.
pub fn bicubic_upscale(map: &[f64], r_h: usize, target_r: usize) -> Result<Vec<f64>> {
    if r_h == 0 {
        return Err(Error::Validation("source resolution must be >= 1".into()));
    }
    if target_r < r_h {
        return Err(Error::DownscaleNotSupported {
            from: r_h,
            to: target_r,
        });
    }
    if map.len() != r_h * r_h {
        return Err(Error::Shape(format!(
            "map at resolution {r_h} needs {} values, got {}",
            r_h * r_h,
            map.len()
        )));
    }
    if target_r == r_h {
        return Ok(map.to_vec());
    }
    let mut out = resize_bicubic(map, r_h, r_h, target_r, target_r)?;
    for v in &mut out {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let s: f64 = (-1..=2).map(|o| cubic_kernel(t - o as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12, "t={t} sum={s}");
        }
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
    }

    #[test]
    fn constant_map_stays_constant() {
        let out = bicubic_upscale(&[0.7; 16], 4, 64).unwrap();
        assert_eq!(out.len(), 64 * 64);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn identity_is_bit_exact() {
        let src: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = bicubic_upscale(&src, 8, 8).unwrap();
        assert_eq!(
            src.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            out.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn downscale_rejected() {
        assert!(matches!(
            bicubic_upscale(&[0.0; 64], 8, 4),
            Err(Error::DownscaleNotSupported { from: 8, to: 4 })
        ));
    }

    #[test]
    fn overshoot_is_clamped() {
        // A single hot pixel produces negative lobes around it.
        let mut src = vec![0.0; 16];
        src[5] = 1.0;
        let raw = resize_bicubic(&src, 4, 4, 16, 16).unwrap();
        assert!(raw.iter().any(|&v| v < 0.0));
        let out = bicubic_upscale(&src, 4, 16).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn smooth_input_preserves_mean() {
        let r = 8;
        let src: Vec<f64> = (0..r * r)
            .map(|i| {
                let (y, x) = ((i / r) as f64, (i % r) as f64);
                0.5 + 0.3 * (x * 0.4).sin() * (y * 0.3).cos()
            })
            .collect();
        let out = bicubic_upscale(&src, r, 32).unwrap();
        let mi = src.iter().sum::<f64>() / src.len() as f64;
        let mo = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mi - mo).abs() < 0.02, "{mi} vs {mo}");
    }
}
