// SPDX-License-Identifier: MIT OR Apache-2.0

//! ATND: a little-endian container for per-head attention tensors.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ATND"
//! 4       2     version (u16) = 1
//! 6       2     flags (u16), reserved, must be 0
//! 8       4     H  head count (u32)
//! 12      4     T  timestep count (u32)
//! 16      4     S  token / concept count (u32)
//! 20      4     d_k (u32)
//! 24      1     content kind (u8): 0 maps, 1 queries+keys, 2 concept keys
//! 25      12*H  head table: r_h (u32), absolute byte offset (u64)
//! ...           payload: f32 LE, row-major, head blocks in head order
//! ```
//!
//! Head block contents by kind:
//! - maps: `T` maps of `r_h² × S`
//! - queries+keys: `T` query matrices of `r_h² × d_k`, then one `S × d_k` key matrix
//! - concept keys: one `S × d_k` matrix (`T` must be 1, `r_h` is not used)
//!
//! Blocks are contiguous: the first starts right after the head table and
//! the file ends right after the last.

use std::path::Path;

use thiserror::Error;

use crate::aggregation::AggregatedMap;
use crate::attention::{AttentionMap, KeyMatrix, Matrix, QueryMatrix};
use crate::error::{Error, Result};
use crate::hrv::ConceptKeySet;

pub const MAGIC: [u8; 4] = *b"ATND";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 25;
pub const HEAD_ENTRY_LEN: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AtndError {
    #[error("not an ATND file (bad magic)")]
    BadMagic,
    #[error("unsupported ATND version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported ATND flags {0:#06x}")]
    UnsupportedFlags(u16),
    #[error("unknown content kind {0}")]
    UnknownContentKind(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated: need {expected} bytes, have {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("head {head}: block offset {found} overlaps previous data (expected {expected})")]
    OffsetOverlap {
        head: u32,
        expected: u64,
        found: u64,
    },
    #[error("head {head}: block offset {found} leaves a gap (expected {expected})")]
    OffsetGap {
        head: u32,
        expected: u64,
        found: u64,
    },
    #[error("head {head}: non-finite value at element {index}")]
    NonFinite { head: u32, index: u64 },
    #[error("content kind mismatch: file holds {found:?}, expected {expected:?}")]
    WrongKind {
        expected: ContentKind,
        found: ContentKind,
    },
}

impl AtndError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AtndError::BadMagic => "ATND_BAD_MAGIC",
            AtndError::UnsupportedVersion(_) => "ATND_BAD_VERSION",
            AtndError::UnsupportedFlags(_) => "ATND_BAD_FLAGS",
            AtndError::UnknownContentKind(_) => "ATND_BAD_KIND",
            AtndError::InvalidHeader(_) => "ATND_INVALID_HEADER",
            AtndError::Truncated { .. } => "ATND_TRUNCATED",
            AtndError::TrailingBytes { .. } => "ATND_TRAILING_BYTES",
            AtndError::OffsetOverlap { .. } => "ATND_OFFSET_OVERLAP",
            AtndError::OffsetGap { .. } => "ATND_OFFSET_GAP",
            AtndError::NonFinite { .. } => "ATND_NON_FINITE",
            AtndError::WrongKind { .. } => "ATND_WRONG_KIND",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ContentKind {
    Maps = 0,
    QueryKey = 1,
    ConceptKeys = 2,
}

impl TryFrom<u8> for ContentKind {
    type Error = AtndError;

    fn try_from(v: u8) -> std::result::Result<Self, AtndError> {
        match v {
            0 => Ok(ContentKind::Maps),
            1 => Ok(ContentKind::QueryKey),
            2 => Ok(ContentKind::ConceptKeys),
            other => Err(AtndError::UnknownContentKind(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtndHeader {
    pub heads: u32,
    pub timesteps: u32,
    pub tokens: u32,
    pub d_k: u32,
    pub kind: ContentKind,
}

impl AtndHeader {
    fn validate(&self) -> std::result::Result<(), AtndError> {
        let bad = |m: &str| Err(AtndError::InvalidHeader(m.to_string()));
        if self.heads == 0 {
            return bad("head count is 0");
        }
        if self.timesteps == 0 {
            return bad("timestep count is 0");
        }
        if self.tokens == 0 {
            return bad("token count is 0");
        }
        if self.kind != ContentKind::Maps && self.d_k == 0 {
            return bad("d_k is 0");
        }
        if self.kind == ContentKind::ConceptKeys && self.timesteps != 1 {
            return bad("concept-key files must have T = 1");
        }
        Ok(())
    }

    /// Number of f32 values in a head block at resolution `r_h`.
    pub fn block_len(&self, r_h: u32) -> std::result::Result<u64, AtndError> {
        if r_h == 0 {
            return Err(AtndError::InvalidHeader("head resolution r_h is 0".into()));
        }
        let (t, s, d) = (self.timesteps as u64, self.tokens as u64, self.d_k as u64);
        let pixels = (r_h as u64) * (r_h as u64);
        let len = match self.kind {
            ContentKind::Maps => pixels.checked_mul(s).and_then(|v| v.checked_mul(t)),
            ContentKind::QueryKey => pixels
                .checked_mul(d)
                .and_then(|v| v.checked_mul(t))
                .and_then(|v| v.checked_add(s * d)),
            ContentKind::ConceptKeys => Some(s * d),
        };
        len.ok_or_else(|| AtndError::InvalidHeader("block size overflows".into()))
    }
}

/// One head's resolution and raw payload.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBlock {
    pub resolution: u32,
    pub data: Vec<f32>,
}

/// An in-memory ATND file.
#[derive(Debug, Clone, PartialEq)]
pub struct AtndFile {
    header: AtndHeader,
    blocks: Vec<HeadBlock>,
}

impl AtndFile {
    /// Builds a file after checking every invariant the reader enforces.
    pub fn new(header: AtndHeader, blocks: Vec<HeadBlock>) -> Result<Self> {
        header.validate()?;
        if blocks.len() != header.heads as usize {
            return Err(AtndError::InvalidHeader(format!(
                "{} head blocks for H = {}",
                blocks.len(),
                header.heads
            ))
            .into());
        }
        for (h, b) in blocks.iter().enumerate() {
            let expected = header.block_len(b.resolution)?;
            if b.data.len() as u64 != expected {
                return Err(Error::Shape(format!(
                    "head {h}: block holds {} values, header implies {expected}",
                    b.data.len()
                )));
            }
            if let Some(i) = b.data.iter().position(|v| !v.is_finite()) {
                return Err(AtndError::NonFinite {
                    head: h as u32,
                    index: i as u64,
                }
                .into());
            }
        }
        Ok(Self { header, blocks })
    }

    pub fn header(&self) -> &AtndHeader {
        &self.header
    }

    pub fn kind(&self) -> ContentKind {
        self.header.kind
    }

    pub fn blocks(&self) -> &[HeadBlock] {
        &self.blocks
    }

    pub fn resolution(&self, head: u32) -> usize {
        self.blocks[head as usize].resolution as usize
    }

    fn expect_kind(&self, kind: ContentKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(AtndError::WrongKind {
                expected: kind,
                found: self.header.kind,
            }
            .into());
        }
        Ok(())
    }

    fn matrix(data: &[f32], rows: usize, cols: usize) -> Result<Matrix> {
        Matrix::new(rows, cols, data.iter().map(|&v| v as f64).collect())
    }

    /// The `T` attention maps of `head` (maps files only).
    pub fn maps(&self, head: u32) -> Result<Vec<AttentionMap>> {
        self.expect_kind(ContentKind::Maps)?;
        let block = self.head_block(head)?;
        let r = block.resolution as usize;
        let s = self.header.tokens as usize;
        block
            .data
            .chunks_exact(r * r * s)
            .enumerate()
            .map(|(t, chunk)| AttentionMap::new(head, t as u32, r, Self::matrix(chunk, r * r, s)?))
            .collect()
    }

    /// The `T` query matrices of `head` (queries+keys files only).
    pub fn queries(&self, head: u32) -> Result<Vec<QueryMatrix>> {
        self.expect_kind(ContentKind::QueryKey)?;
        let block = self.head_block(head)?;
        let r = block.resolution as usize;
        let d = self.header.d_k as usize;
        let t = self.header.timesteps as usize;
        block.data[..t * r * r * d]
            .chunks_exact(r * r * d)
            .enumerate()
            .map(|(ts, chunk)| QueryMatrix::new(head, ts as u32, r, Self::matrix(chunk, r * r, d)?))
            .collect()
    }

    /// The prompt key matrix of `head` (queries+keys files only).
    pub fn keys(&self, head: u32) -> Result<KeyMatrix> {
        self.expect_kind(ContentKind::QueryKey)?;
        let block = self.head_block(head)?;
        let s = self.header.tokens as usize;
        let d = self.header.d_k as usize;
        let start = block.data.len() - s * d;
        KeyMatrix::new(Self::matrix(&block.data[start..], s, d)?)
    }

    /// Concept keys of `head` labelled with `names` (concept-key files only).
    pub fn concept_keys(&self, head: u32, names: &[String]) -> Result<ConceptKeySet> {
        self.expect_kind(ContentKind::ConceptKeys)?;
        let block = self.head_block(head)?;
        let s = self.header.tokens as usize;
        let d = self.header.d_k as usize;
        ConceptKeySet::new(head, names.to_vec(), Self::matrix(&block.data, s, d)?)
    }

    fn head_block(&self, head: u32) -> Result<&HeadBlock> {
        self.blocks.get(head as usize).ok_or_else(|| {
            Error::Validation(format!(
                "head {head} out of range for {} heads",
                self.header.heads
            ))
        })
    }

    /// Stores an aggregated map as a single logical head with `T = 1`.
    pub fn from_aggregated(agg: &AggregatedMap) -> Result<Self> {
        let header = AtndHeader {
            heads: 1,
            timesteps: 1,
            tokens: agg.token_count() as u32,
            d_k: 0,
            kind: ContentKind::Maps,
        };
        let block = HeadBlock {
            resolution: agg.resolution() as u32,
            data: agg.as_slice().iter().map(|&v| v as f32).collect(),
        };
        Self::new(header, vec![block])
    }

    /// Reads back a file written by [`AtndFile::from_aggregated`].
    pub fn to_aggregated(&self) -> Result<AggregatedMap> {
        self.expect_kind(ContentKind::Maps)?;
        if self.header.heads != 1 || self.header.timesteps != 1 {
            return Err(Error::Format(format!(
                "aggregated map files have H = T = 1, found H = {}, T = {}",
                self.header.heads, self.header.timesteps
            )));
        }
        let block = &self.blocks[0];
        AggregatedMap::new(
            block.resolution as usize,
            self.header.tokens as usize,
            block.data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let payload: usize = self.blocks.iter().map(|b| b.data.len() * 4).sum();
        let table_end = HEADER_LEN + HEAD_ENTRY_LEN * self.blocks.len();
        let mut out = Vec::with_capacity(table_end + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for v in [h.heads, h.timesteps, h.tokens, h.d_k] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(h.kind as u8);
        let mut offset = table_end as u64;
        for b in &self.blocks {
            out.extend_from_slice(&b.resolution.to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += b.data.len() as u64 * 4;
        }
        for b in &self.blocks {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and fully validates an ATND image.
    ///
    /// Nothing is allocated for the payload until the header-implied size
    /// has been checked against `bytes.len()`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(parse(bytes)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn parse(bytes: &[u8]) -> std::result::Result<AtndFile, AtndError> {
    let actual = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(AtndError::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    if bytes[..4] != MAGIC {
        return Err(AtndError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(AtndError::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let version = u16_at(bytes, 4);
    if version != VERSION {
        return Err(AtndError::UnsupportedVersion(version));
    }
    let flags = u16_at(bytes, 6);
    if flags != 0 {
        return Err(AtndError::UnsupportedFlags(flags));
    }
    let header = AtndHeader {
        heads: u32_at(bytes, 8),
        timesteps: u32_at(bytes, 12),
        tokens: u32_at(bytes, 16),
        d_k: u32_at(bytes, 20),
        kind: ContentKind::try_from(bytes[24])?,
    };
    header.validate()?;

    let table_end = HEADER_LEN as u64 + HEAD_ENTRY_LEN as u64 * header.heads as u64;
    if actual < table_end {
        return Err(AtndError::Truncated {
            expected: table_end,
            actual,
        });
    }

    // Validate the whole layout before allocating any payload.
    let mut layout = Vec::with_capacity(header.heads as usize);
    let mut expected = table_end;
    for h in 0..header.heads {
        let at = HEADER_LEN + HEAD_ENTRY_LEN * h as usize;
        let r_h = u32_at(bytes, at);
        let offset = u64_at(bytes, at + 4);
        let len = header.block_len(r_h)?;
        if offset < expected {
            return Err(AtndError::OffsetOverlap {
                head: h,
                expected,
                found: offset,
            });
        }
        if offset > expected {
            return Err(AtndError::OffsetGap {
                head: h,
                expected,
                found: offset,
            });
        }
        let bytes_len = len
            .checked_mul(4)
            .ok_or_else(|| AtndError::InvalidHeader("block size overflows".into()))?;
        expected = expected
            .checked_add(bytes_len)
            .ok_or_else(|| AtndError::InvalidHeader("payload size overflows".into()))?;
        layout.push((r_h, offset, len));
    }
    if actual < expected {
        return Err(AtndError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(AtndError::TrailingBytes {
            extra: actual - expected,
        });
    }

    let mut blocks = Vec::with_capacity(layout.len());
    for (h, (r_h, offset, len)) in layout.into_iter().enumerate() {
        let start = offset as usize;
        let raw = &bytes[start..start + len as usize * 4];
        let mut data = Vec::with_capacity(len as usize);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(AtndError::NonFinite {
                    head: h as u32,
                    index: i as u64,
                });
            }
            data.push(v);
        }
        blocks.push(HeadBlock {
            resolution: r_h,
            data,
        });
    }
    Ok(AtndFile { header, blocks })
}
