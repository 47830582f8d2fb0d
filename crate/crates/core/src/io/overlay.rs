// SPDX-License-Identifier: MIT OR Apache-2.0

//! Heatmap overlays on generated images.
//!
//! Heat `v` maps to the color `(255 v, 0, 255 (1 - v))` with opacity `v`,
//! so cold pixels are transparent blue and hot pixels opaque red. The
//! tinted layer is blended over the base image at 50%.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgba, RgbaImage};

use crate::aggregation::TokenHeatmap;
use crate::error::{Error, Result};
use crate::resample::resize_bicubic;

pub const OVERLAY_OPACITY: f64 = 0.5;

fn ramp(v: f64) -> [f64; 3] {
    [255.0 * v, 0.0, 255.0 * (1.0 - v)]
}

/// Blends `heatmap`, resized to the image, over `base`.
pub fn render_overlay_image(base: &DynamicImage, heatmap: &TokenHeatmap) -> Result<RgbaImage> {
    let (w, h) = (base.width() as usize, base.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format("base image is empty".into()));
    }
    let r = heatmap.resolution();
    let heat = if (w, h) == (r, r) {
        heatmap.values().to_vec()
    } else {
        resize_bicubic(heatmap.values(), r, r, w, h)?
    };
    let mut out = base.to_rgba8();
    for (px, &v) in out.pixels_mut().zip(&heat) {
        let v = v.clamp(0.0, 1.0);
        let a = OVERLAY_OPACITY * v;
        if a == 0.0 {
            continue;
        }
        let color = ramp(v);
        let Rgba([r, g, b, alpha]) = *px;
        let mix =
            |base: u8, c: f64| (base as f64 * (1.0 - a) + c * a).round().clamp(0.0, 255.0) as u8;
        *px = Rgba([mix(r, color[0]), mix(g, color[1]), mix(b, color[2]), alpha]);
    }
    Ok(out)
}

/// Renders an overlay PNG. Output keeps the base image's alpha channel
/// only if it had one.
pub fn render_overlay(
    base_image: impl AsRef<Path>,
    heatmap: &TokenHeatmap,
    out_path: impl AsRef<Path>,
) -> Result<()> {
    let (base_image, out_path) = (base_image.as_ref(), out_path.as_ref());
    let bytes = std::fs::read(base_image).map_err(|e| Error::io(base_image, e))?;
    let base = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", base_image.display())))?;
    let blended = render_overlay_image(&base, heatmap)?;
    let out = if base.color().has_alpha() {
        DynamicImage::ImageRgba8(blended)
    } else {
        DynamicImage::ImageRgb8(DynamicImage::ImageRgba8(blended).to_rgb8())
    };
    let mut buf = Cursor::new(Vec::new());
    out.write_to(&mut buf, ImageFormat::Png)?;
    std::fs::write(out_path, buf.into_inner()).map_err(|e| Error::io(out_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn base() -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_fn(8, 8, |x, y| {
            image::Rgb([(x * 30) as u8, (y * 30) as u8, 100])
        }))
    }

    #[test]
    fn zero_heatmap_leaves_base_untouched() {
        let h = TokenHeatmap::normalized(4, vec![0.0; 16]).unwrap();
        let out = render_overlay_image(&base(), &h).unwrap();
        assert_eq!(out, base().to_rgba8());
    }

    #[test]
    fn full_heatmap_is_uniform_red_tint() {
        let h = TokenHeatmap::normalized(2, vec![1.0; 4]).unwrap();
        let b = DynamicImage::ImageRgb8(RgbImage::from_pixel(8, 8, image::Rgb([0, 0, 0])));
        let out = render_overlay_image(&b, &h).unwrap();
        assert!(out.pixels().all(|p| *p == Rgba([128, 0, 0, 255])));
    }

    #[test]
    fn undecodable_base_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let h = TokenHeatmap::normalized(1, vec![1.0]).unwrap();
        let err = render_overlay(&p, &h, dir.path().join("out.png")).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
