// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense matrices and the scaled dot-product cross-attention map.
//!
//! Spatial positions are flattened row-major (y first, then x), so a map
//! at resolution `r` has `r * r` rows. All arithmetic is done in `f64`.

use crate::error::{Error, Result};

/// Row sums of externally supplied maps may drift this far from 1 (f32
/// storage over long token axes).
pub const LOADED_ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Column `c` as a contiguous vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Validation(format!(
                "{what} has non-finite value {} at ({}, {})",
                self.data[i],
                i / self.cols.max(1),
                i % self.cols.max(1)
            ))),
        }
    }
}

/// Numerically stable row-wise softmax.
///
/// Each row is shifted by its maximum before exponentiation, so logits of
/// magnitude up to ~1e300 stay finite.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("softmax input")?;
    let mut out = Vec::with_capacity(m.data.len());
    for i in 0..m.rows {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &x in row {
            let e = (x - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= sum;
        }
    }
    Matrix::new(m.rows, m.cols, out)
}

/// `a · bᵀ / sqrt(d)` where `d` is the shared inner dimension.
pub fn scaled_logits(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape(format!(
            "query d_k = {} but key d_k = {}",
            a.cols, b.cols
        )));
    }
    let scale = 1.0 / (a.cols as f64).sqrt();
    let mut out = Vec::with_capacity(a.rows * b.rows);
    for i in 0..a.rows {
        let q = a.row(i);
        for j in 0..b.rows {
            let k = b.row(j);
            let dot: f64 = q.iter().zip(k).map(|(x, y)| x * y).sum();
            out.push(dot * scale);
        }
    }
    Matrix::new(a.rows, b.rows, out)
}

/// Spatial query features of one head at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMatrix {
    pub head_id: u32,
    pub timestep: u32,
    resolution: usize,
    values: Matrix,
}

impl QueryMatrix {
    pub fn new(head_id: u32, timestep: u32, resolution: usize, values: Matrix) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Validation("query resolution must be >= 1".into()));
        }
        if values.cols == 0 {
            return Err(Error::Validation("query d_k must be >= 1".into()));
        }
        if values.rows != resolution * resolution {
            return Err(Error::Shape(format!(
                "query at resolution {resolution} needs {} rows, got {}",
                resolution * resolution,
                values.rows
            )));
        }
        values.ensure_finite("query matrix")?;
        Ok(Self {
            head_id,
            timestep,
            resolution,
            values,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn d_k(&self) -> usize {
        self.values.cols
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Key-projected prompt token embeddings for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMatrix {
    values: Matrix,
}

impl KeyMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows == 0 {
            return Err(Error::Validation(
                "key matrix needs at least one token".into(),
            ));
        }
        if values.cols == 0 {
            return Err(Error::Validation("key d_k must be >= 1".into()));
        }
        values.ensure_finite("key matrix")?;
        Ok(Self { values })
    }

    pub fn token_count(&self) -> usize {
        self.values.rows
    }

    pub fn d_k(&self) -> usize {
        self.values.cols
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Row-stochastic `r_h² × S` cross-attention map of one head.
///
/// Time-averaged maps carry timestep 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub head_id: u32,
    pub timestep: u32,
    resolution: usize,
    values: Matrix,
}

impl AttentionMap {
    /// Validates that `values` is a row-stochastic map at `resolution`.
    pub fn new(head_id: u32, timestep: u32, resolution: usize, values: Matrix) -> Result<Self> {
        Self::with_tolerance(
            head_id,
            timestep,
            resolution,
            values,
            LOADED_ROW_SUM_TOLERANCE,
        )
    }

    pub fn with_tolerance(
        head_id: u32,
        timestep: u32,
        resolution: usize,
        values: Matrix,
        tolerance: f64,
    ) -> Result<Self> {
        if resolution == 0 || values.cols == 0 {
            return Err(Error::Validation(
                "attention map needs resolution >= 1 and at least one token".into(),
            ));
        }
        if values.rows != resolution * resolution {
            return Err(Error::Shape(format!(
                "map at resolution {resolution} needs {} rows, got {}",
                resolution * resolution,
                values.rows
            )));
        }
        values.ensure_finite("attention map")?;
        for i in 0..values.rows {
            let row = values.row(i);
            if row
                .iter()
                .any(|&v| !(-tolerance..=1.0 + tolerance).contains(&v))
            {
                return Err(Error::Validation(format!(
                    "head {head_id} t={timestep}: row {i} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::Validation(format!(
                    "head {head_id} t={timestep}: row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            head_id,
            timestep,
            resolution,
            values,
        })
    }

    pub(crate) fn from_parts_unchecked(
        head_id: u32,
        timestep: u32,
        resolution: usize,
        values: Matrix,
    ) -> Self {
        Self {
            head_id,
            timestep,
            resolution,
            values,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn token_count(&self) -> usize {
        self.values.cols
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// Prompt tokens and the indices of the word being explained.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenInfo {
    tokens: Vec<String>,
    targets: Vec<usize>,
}

impl TokenInfo {
    pub fn new(tokens: Vec<String>, targets: Vec<usize>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Validation("no target token indices".into()));
        }
        if targets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "target token indices {targets:?} are not strictly increasing"
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= tokens.len()) {
            return Err(Error::Validation(format!(
                "target token index {bad} out of range for {} tokens",
                tokens.len()
            )));
        }
        Ok(Self { tokens, targets })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// The target word, sub-tokens joined.
    pub fn target_text(&self) -> String {
        self.targets
            .iter()
            .map(|&i| self.tokens[i].as_str())
            .collect::<Vec<_>>()
            .join("")
    }
}

/// Eq. 1 style cross-attention: `softmax(Q·Kᵀ / sqrt(d_k))`.
pub fn compute_attention_map(q: &QueryMatrix, k: &KeyMatrix) -> Result<AttentionMap> {
    if q.d_k() != k.d_k() {
        return Err(Error::Shape(format!(
            "query (head {}, t={}) has d_k = {} but key matrix has d_k = {}",
            q.head_id,
            q.timestep,
            q.d_k(),
            k.d_k()
        )));
    }
    let probs = softmax_rows(&scaled_logits(&q.values, &k.values)?)?;
    Ok(AttentionMap::from_parts_unchecked(
        q.head_id,
        q.timestep,
        q.resolution,
        probs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_softmax(xs: &[f64]) -> Vec<f64> {
        let total: f64 = xs.iter().map(|x| x.exp()).sum();
        xs.iter().map(|x| x.exp() / total).collect()
    }

    #[test]
    fn zero_queries_give_uniform_rows() {
        let q = QueryMatrix::new(0, 0, 2, Matrix::zeros(4, 8)).unwrap();
        let k =
            KeyMatrix::new(Matrix::new(5, 8, (0..40).map(|i| i as f64 * 0.1).collect()).unwrap())
                .unwrap();
        let m = compute_attention_map(&q, &k).unwrap();
        for i in 0..4 {
            for &v in m.values().row(i) {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_pixel_two_tokens() {
        let q = QueryMatrix::new(0, 0, 1, Matrix::from_rows(&[vec![1.0]]).unwrap()).unwrap();
        let k = KeyMatrix::new(Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap()).unwrap();
        let m = compute_attention_map(&q, &k).unwrap();
        let expected = scalar_softmax(&[1.0, 0.0]);
        assert!((m.values().get(0, 0) - expected[0]).abs() < 1e-12);
        assert!((m.values().get(0, 1) - expected[1]).abs() < 1e-12);
        assert!((m.values().get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((m.values().get(0, 1) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::from_rows(&[vec![1000.0, 1000.0]]).unwrap()).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::from_rows(&[vec![1f64.ln(), 3f64.ln()]]).unwrap()).unwrap();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_magnitudes_stay_finite() {
        let s = softmax_rows(&Matrix::from_rows(&[vec![1e4, -1e4, 0.0]]).unwrap()).unwrap();
        assert!(s.is_finite());
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn softmax_rejects_nan() {
        let err = softmax_rows(&Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn d_k_mismatch_is_shape_error() {
        let q = QueryMatrix::new(3, 1, 1, Matrix::zeros(1, 4)).unwrap();
        let k = KeyMatrix::new(Matrix::zeros(2, 5)).unwrap();
        match compute_attention_map(&q, &k) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("d_k = 4") && msg.contains("d_k = 5"), "{msg}")
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_query_rejected() {
        let err = QueryMatrix::new(0, 0, 1, Matrix::from_rows(&[vec![f64::INFINITY]]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn token_info_validation() {
        let toks = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert!(TokenInfo::new(toks.clone(), vec![]).is_err());
        assert!(TokenInfo::new(toks.clone(), vec![2, 1]).is_err());
        assert!(TokenInfo::new(toks.clone(), vec![3]).is_err());
        let t = TokenInfo::new(toks, vec![1, 2]).unwrap();
        assert_eq!(t.target_text(), "bc");
    }

    #[test]
    fn attention_map_rejects_non_stochastic_rows() {
        let m = Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap();
        assert!(AttentionMap::new(0, 0, 1, m).is_err());
    }
}
