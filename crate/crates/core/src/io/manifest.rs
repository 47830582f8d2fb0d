// SPDX-License-Identifier: MIT OR Apache-2.0

//! JSON run manifests.
//!
//! A [`RunManifest`] describes one generated image: its prompt, tokens,
//! seed, and the files holding its attention dump, ground-truth mask and
//! rendered image. A [`ConceptManifest`] labels the rows of a concept-key
//! dump. Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::TokenInfo;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub image_id: String,
    pub prompt: String,
    pub token_strings: Vec<String>,
    pub target_token_indices: Vec<usize>,
    pub seed: u64,
    pub model_id: String,
    pub timesteps: u32,
    #[serde(default)]
    pub sampled_concept_words: BTreeMap<String, String>,
    pub dump_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
    /// Directory the manifest was loaded from; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn check_schema(found: u32, path: &Path) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: schema_version {found}, expected {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(())
}

fn require_file(base: &Path, rel: &Path, what: &str, manifest: &Path) -> Result<()> {
    let p = base.join(rel);
    if !p.is_file() {
        return Err(Error::io(
            p,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{what} referenced by {} not found", manifest.display()),
            ),
        ));
    }
    Ok(())
}

impl RunManifest {
    pub fn token_info(&self) -> Result<TokenInfo> {
        TokenInfo::new(
            self.token_strings.clone(),
            self.target_token_indices.clone(),
        )
    }

    pub fn dump(&self) -> PathBuf {
        self.base_dir.join(&self.dump_path)
    }

    pub fn gt_mask(&self) -> Option<PathBuf> {
        self.gt_mask_path.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn image(&self) -> Option<PathBuf> {
        self.image_path.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Loads and validates a manifest; every referenced file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        check_schema(m.schema_version, path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.token_info()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        require_file(&m.base_dir, &m.dump_path, "dump", path)?;
        if let Some(gt) = &m.gt_mask_path {
            require_file(&m.base_dir, gt, "ground-truth mask", path)?;
        }
        if let Some(img) = &m.image_path {
            require_file(&m.base_dir, img, "image", path)?;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Concept labels for a concept-key dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptManifest {
    pub schema_version: u32,
    pub model_id: String,
    pub concepts: Vec<String>,
    #[serde(default)]
    pub concept_words: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub sampled_concept_words: BTreeMap<String, String>,
    pub keys_path: PathBuf,
}

impl ConceptManifest {
    /// Sidecar location for a concept-key dump: same stem, `.json`.
    pub fn sidecar_for(keys_path: &Path) -> PathBuf {
        keys_path.with_extension("json")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ConceptManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        check_schema(m.schema_version, path)?;
        if m.concepts.is_empty() {
            return Err(Error::Format(format!("{}: no concepts", path.display())));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            image_id: "img_000".into(),
            prompt: "photo of a dog".into(),
            token_strings: vec![
                "<sot>".into(),
                "photo".into(),
                "of".into(),
                "a".into(),
                "dog".into(),
            ],
            target_token_indices: vec![4],
            seed: 7,
            model_id: "test".into(),
            timesteps: 2,
            sampled_concept_words: BTreeMap::new(),
            dump_path: "img_000.atnd".into(),
            gt_mask_path: Some("img_000_gt.pgm".into()),
            image_path: None,
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn load_checks_referenced_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, manifest().to_json().unwrap()).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(Error::Io { .. })));
        std::fs::write(dir.path().join("img_000.atnd"), b"").unwrap();
        std::fs::write(dir.path().join("img_000_gt.pgm"), b"").unwrap();
        let m = RunManifest::load(&path).unwrap();
        assert_eq!(m.dump(), dir.path().join("img_000.atnd"));
        assert_eq!(m.token_info().unwrap().target_text(), "dog");
    }

    #[test]
    fn bad_indices_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest();
        m.target_token_indices = vec![9];
        let path = dir.path().join("m.json");
        std::fs::write(&path, m.to_json().unwrap()).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_schema_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest();
        m.schema_version = 99;
        let path = dir.path().join("m.json");
        std::fs::write(&path, m.to_json().unwrap()).unwrap();
        assert!(matches!(RunManifest::load(&path), Err(Error::Format(_))));
    }
}
