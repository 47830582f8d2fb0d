// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: ATND tensor dumps, PGM masks, JSON manifests and PNG
//! overlays.

pub mod atnd;
pub mod manifest;
pub mod mask;
pub mod overlay;

pub use atnd::{AtndError, AtndFile, AtndHeader, ContentKind, HeadBlock};
pub use manifest::{ConceptManifest, RunManifest, SCHEMA_VERSION};
pub use mask::{decode_pgm, encode_pgm, read_mask, write_mask};
pub use overlay::{render_overlay, render_overlay_image};
