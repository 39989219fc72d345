//! Dense row-major kernels shared by the engine, the pruner and the analyzers.
//!
//! Reductions always run sequentially over the natural index so results are
//! bit-reproducible; parallelism (when enabled) is only ever across output
//! rows, never inside a sum.

mod median;
mod svd;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToastError};
use crate::par;

pub use median::{geometric_median, median_objective, GM_MAX_ITER, GM_TOL};
pub use svd::{least_squares, singular_values};
pub(crate) use svd::{lstsq_f64, singular_values_f64};

/// Row-major `rows × cols` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Dense vector of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix, rejecting length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ToastError::shape(
                None,
                "matrix",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ToastError::NonFinite("matrix".into()));
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

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f32> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: f32) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    /// `self · rhs`. Panics if the inner dimensions disagree.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul inner dimension mismatch: {}x{} · {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let m = rhs.cols;
        let mut out = vec![0.0f32; self.rows * m];
        par::for_each_row(&mut out, m, |i, orow| {
            let arow = self.row(i);
            for (k, &a) in arow.iter().enumerate() {
                let brow = rhs.row(k);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        });
        Matrix::from_raw(self.rows, m, out)
    }

    /// `self · rhsᵀ`. Panics if the column counts disagree.
    pub fn matmul_transposed(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_transposed width mismatch: {}x{} · ({}x{})ᵀ",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let m = rhs.rows;
        let mut out = vec![0.0f32; self.rows * m];
        par::for_each_row(&mut out, m, |i, orow| {
            let arow = self.row(i);
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, rhs.row(j));
            }
        });
        Matrix::from_raw(self.rows, m, out)
    }

    /// Adds `bias` to every row in place.
    pub fn add_row_vector(&mut self, bias: &Vector) {
        assert_eq!(bias.len(), self.cols, "bias width mismatch");
        for row in self.data.chunks_mut(self.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(bias.as_slice()) {
                *v += b;
            }
        }
    }

    /// Elementwise `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.dims(), rhs.dims(), "add dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix::from_raw(idx.len(), self.cols, data)
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    /// Submatrix keeping `rows × cols` in the given orders.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(ToastError::shape(
                    None,
                    "vstack",
                    format!("column count {} != {cols}", p.cols),
                ));
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix::from_raw(rows, cols, data))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ToastError::NonFinite("vector".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn filled(len: usize, v: f32) -> Self {
        Self { data: vec![v; len] }
    }

    pub(crate) fn from_raw(data: Vec<f32>) -> Self {
        Self { data }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize) -> f32 {
        self.data[i]
    }

    pub fn gather(&self, idx: &[usize]) -> Vector {
        Vector::from_raw(idx.iter().map(|&i| self.data[i]).collect())
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.data
    }
}

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Row-wise softmax with max subtraction.
pub fn stable_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for row in out.data.chunks_mut(x.cols.max(1)) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Exact erf-based GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

/// LayerNorm epsilon used throughout the engine.
pub const LN_EPS: f32 = 1e-6;

/// Per-row LayerNorm with biased variance.
pub fn layer_norm(x: &Matrix, scale: &Vector, shift: &Vector, eps: f32) -> Matrix {
    assert_eq!(scale.len(), x.cols);
    assert_eq!(shift.len(), x.cols);
    let n = x.cols as f32;
    let mut out = x.clone();
    for row in out.data.chunks_mut(x.cols.max(1)) {
        let mut mean = 0.0f32;
        for v in row.iter() {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0f32;
        for v in row.iter() {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(&scale.data).zip(&shift.data) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    out
}
