//! Dense real-valued arrays and the handful of array operations the rest of
//! the crate composes: matrix product, sequence-mean pooling, and row-wise
//! concatenation.
//!
//! Storage is row-major `f32` throughout; accumulation happens in `f64` and
//! is narrowed once at the end, so results are deterministic and independent
//! of how callers batch their inputs.

use crate::error::{Error, Result};

/// Row-major matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major values, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(
                "DenseMatrix::from_vec",
                format!("non-finite entry {v}"),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from a list of equally sized rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty {
                op: "DenseMatrix::from_rows",
            });
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "DenseMatrix::from_rows",
                format!("{cols} cols"),
                format!("row of {} cols", bad.len()),
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c]
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Largest absolute entry, 0 for an empty matrix.
    pub fn abs_max(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entry of column `c`.
    pub fn col_abs_max(&self, c: usize) -> f32 {
        (0..self.rows).fold(0.0f32, |m, r| m.max(self.get(r, c).abs()))
    }

    /// Largest absolute entry of row `r`.
    pub fn row_abs_max(&self, r: usize) -> f32 {
        self.row(r).iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Contiguous rank-3 tensor in `(batch, seq, dim)` index order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    batch: usize,
    seq: usize,
    dim: usize,
    values: Vec<f32>,
}

impl DenseTensor3 {
    pub fn from_vec(batch: usize, seq: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != batch * seq * dim {
            return Err(Error::shape(
                "DenseTensor3::from_vec",
                format!("{batch}x{seq}x{dim}"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(
                "DenseTensor3::from_vec",
                format!("non-finite entry {v}"),
            ));
        }
        Ok(Self {
            batch,
            seq,
            dim,
            values,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, b: usize, l: usize, d: usize) -> f32 {
        debug_assert!(b < self.batch && l < self.seq && d < self.dim);
        self.values[(b * self.seq + l) * self.dim + d]
    }

    /// Position `(b, l)` as a dim-length slice.
    pub fn position(&self, b: usize, l: usize) -> &[f32] {
        let start = (b * self.seq + l) * self.dim;
        &self.values[start..start + self.dim]
    }
}

/// Standard matrix product with 64-bit accumulation.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    let mut out = vec![0.0f32; a.rows * b.cols];
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        acc.fill(0.0);
        for k in 0..a.cols {
            let aik = a.get(i, k) as f64;
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for (j, bv) in brow.iter().enumerate() {
                acc[j] += aik * *bv as f64;
            }
        }
        for (j, v) in acc.iter().enumerate() {
            out[i * b.cols + j] = *v as f32;
        }
    }
    DenseMatrix::from_vec(a.rows, b.cols, out)
}

/// Pools a `(B, L, H)` tensor to `B x H` by averaging over the full sequence
/// length, padding positions included.
pub fn mean_over_sequence(h: &DenseTensor3) -> Result<DenseMatrix> {
    if h.seq == 0 {
        return Err(Error::Empty {
            op: "mean_over_sequence",
        });
    }
    let inv = 1.0 / h.seq as f64;
    let mut out = vec![0.0f32; h.batch * h.dim];
    for b in 0..h.batch {
        for d in 0..h.dim {
            let mut acc = 0.0f64;
            for l in 0..h.seq {
                acc += h.get(b, l, d) as f64;
            }
            out[b * h.dim + d] = (acc * inv) as f32;
        }
    }
    DenseMatrix::from_vec(h.batch, h.dim, out)
}

/// Variant of [`mean_over_sequence`] that averages only the first
/// `true_lengths[b]` positions of each row. Rows with length 0 fall back to
/// the full-length average, which keeps the operation total (an all-padding
/// row then pools exactly as the unmasked variant would).
///
/// This is an opt-in alternative; the pipeline default pools over the full
/// padded length.
pub fn mean_over_sequence_masked(
    h: &DenseTensor3,
    true_lengths: &[usize],
) -> Result<DenseMatrix> {
    if h.seq == 0 {
        return Err(Error::Empty {
            op: "mean_over_sequence_masked",
        });
    }
    if true_lengths.len() != h.batch {
        return Err(Error::shape(
            "mean_over_sequence_masked",
            format!("{} rows", h.batch),
            format!("{} lengths", true_lengths.len()),
        ));
    }
    let mut out = vec![0.0f32; h.batch * h.dim];
    for b in 0..h.batch {
        let len = true_lengths[b].min(h.seq);
        let len = if len == 0 { h.seq } else { len };
        let inv = 1.0 / len as f64;
        for d in 0..h.dim {
            let mut acc = 0.0f64;
            for l in 0..len {
                acc += h.get(b, l, d) as f64;
            }
            out[b * h.dim + d] = (acc * inv) as f32;
        }
    }
    DenseMatrix::from_vec(h.batch, h.dim, out)
}

/// Stacks matrices vertically, preserving row order and bit patterns.
pub fn concat_rows(parts: &[DenseMatrix]) -> Result<DenseMatrix> {
    if parts.is_empty() {
        return Err(Error::Empty { op: "concat_rows" });
    }
    let cols = parts[0].cols;
    if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
        return Err(Error::shape(
            "concat_rows",
            format!("{cols} cols"),
            format!("{} cols", bad.cols),
        ));
    }
    let rows = parts.iter().map(|p| p.rows).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for p in parts {
        values.extend_from_slice(&p.values);
    }
    DenseMatrix::from_vec(rows, cols, values)
}
