//! Dense row-major `f32` matrices and the handful of kernels the rest of the
//! crate is built from.
//!
//! Storage is `f32`; every reduction (matmul inner products, row sums, means
//! and variances) accumulates in `f64` and rounds once on the way out.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Error, Result};

/// Default epsilon added to the variance in [`layer_norm`].
pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)))
            .finish()
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting a length mismatch or
    /// any non-finite entry.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                left: alloc::format!("{}x{}", rows, cols),
                right: alloc::format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(alloc::format!(
                "non-finite entry at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err("Matrix::from_rows", (i, r.len()), (0, cols)));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers are responsible for keeping
    /// entries finite.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
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

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols, "column range out of bounds");
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for row in self.row_iter() {
            data.extend_from_slice(&row[start..end]);
        }
        Matrix::from_raw(self.rows, end - start, data)
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(shape_err("vstack", (rows, cols), m.shape()));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix::from_raw(rows, cols, data))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Matrix, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f32) -> Matrix {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`, in place.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f32) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err("add_scaled", self.shape(), other.shape()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
    }

    /// Column sums accumulated in `f64`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.cols];
        for row in self.row_iter() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        sums
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let bt = b.transpose();
    Ok(matmul_nt_unchecked(a, &bt))
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    Ok(matmul_nt_unchecked(a, b))
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(shape_err("matmul_tn", a.shape(), b.shape()));
    }
    let mut acc = vec![0.0f64; a.cols * b.cols];
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        for (i, &x) in ra.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let x = f64::from(x);
            let out = &mut acc[i * b.cols..(i + 1) * b.cols];
            for (o, &y) in out.iter_mut().zip(rb) {
                *o += x * f64::from(y);
            }
        }
    }
    Ok(Matrix::from_raw(
        a.cols,
        b.cols,
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}

fn matmul_nt_unchecked(a: &Matrix, bt: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(a.rows * bt.rows);
    for ra in a.row_iter() {
        for rb in bt.row_iter() {
            data.push(dot64(ra, rb) as f32);
        }
    }
    Matrix::from_raw(a.rows, bt.rows, data)
}

/// Horizontal concatenation `[a ; b]`: row `t` of the result is row `t` of `a`
/// followed by row `t` of `b`.
pub fn hconcat(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(shape_err("hconcat", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.rows * (a.cols + b.cols));
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    Ok(Matrix::from_raw(a.rows, a.cols + b.cols, data))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Vec::with_capacity(m.data.len());
    for row in m.row_iter() {
        let mut buf = vec![0.0f64; row.len()];
        softmax_into(row, &mut buf);
        out.extend(buf.into_iter().map(|v| v as f32));
    }
    Matrix::from_raw(m.rows, m.cols, out)
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Vec::with_capacity(m.data.len());
    for row in m.row_iter() {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let max = f64::from(max);
        let lse = max
            + libm::log(
                row.iter()
                    .map(|&v| libm::exp(f64::from(v) - max))
                    .sum::<f64>(),
            );
        out.extend(row.iter().map(|&v| (f64::from(v) - lse) as f32));
    }
    Matrix::from_raw(m.rows, m.cols, out)
}

pub(crate) fn softmax_into(row: &[f32], out: &mut [f64]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let max = f64::from(max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = libm::exp(f64::from(v) - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-row statistics kept by [`layer_norm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Normalized rows before the affine transform.
    pub normalized: Matrix,
    /// `1 / sqrt(var + eps)` for each row.
    pub inv_std: Vec<f64>,
}

/// Normalizes each row to zero mean and unit variance (population variance
/// plus `eps`), then applies `gain * x + bias` elementwise.
pub fn layer_norm(m: &Matrix, gain: &[f32], bias: &[f32], eps: f32) -> Result<Matrix> {
    layer_norm_forward(m, gain, bias, eps).map(|(out, _)| out)
}

pub fn layer_norm_forward(
    m: &Matrix,
    gain: &[f32],
    bias: &[f32],
    eps: f32,
) -> Result<(Matrix, LayerNormCache)> {
    if gain.len() != m.cols || bias.len() != m.cols {
        return Err(Error::Shape {
            op: "layer_norm",
            left: alloc::format!("{}x{}", m.rows, m.cols),
            right: alloc::format!("gain[{}], bias[{}]", gain.len(), bias.len()),
        });
    }
    let d = m.cols as f64;
    let mut normalized = Vec::with_capacity(m.data.len());
    let mut out = Vec::with_capacity(m.data.len());
    let mut inv_std = Vec::with_capacity(m.rows);
    for row in m.row_iter() {
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d;
        let var = row
            .iter()
            .map(|&v| {
                let c = f64::from(v) - mean;
                c * c
            })
            .sum::<f64>()
            / d;
        let istd = 1.0 / libm::sqrt(var + f64::from(eps));
        inv_std.push(istd);
        for ((&v, &g), &b) in row.iter().zip(gain).zip(bias) {
            let n = (f64::from(v) - mean) * istd;
            normalized.push(n as f32);
            out.push((n * f64::from(g) + f64::from(b)) as f32);
        }
    }
    Ok((
        Matrix::from_raw(m.rows, m.cols, out),
        LayerNormCache {
            normalized: Matrix::from_raw(m.rows, m.cols, normalized),
            inv_std,
        },
    ))
}

/// Gradients of [`layer_norm_forward`]: returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f32],
    d_out: &Matrix,
) -> (Matrix, Vec<f32>, Vec<f32>) {
    let (rows, cols) = d_out.shape();
    let d = cols as f64;
    let mut d_gain = vec![0.0f64; cols];
    let mut d_bias = vec![0.0f64; cols];
    let mut d_in = Vec::with_capacity(rows * cols);
    let mut d_norm = vec![0.0f64; cols];
    for r in 0..rows {
        let dy = d_out.row(r);
        let n = cache.normalized.row(r);
        let mut mean_dn = 0.0;
        let mut mean_dn_n = 0.0;
        for c in 0..cols {
            let dyc = f64::from(dy[c]);
            let nc = f64::from(n[c]);
            d_gain[c] += dyc * nc;
            d_bias[c] += dyc;
            d_norm[c] = dyc * f64::from(gain[c]);
            mean_dn += d_norm[c];
            mean_dn_n += d_norm[c] * nc;
        }
        mean_dn /= d;
        mean_dn_n /= d;
        let istd = cache.inv_std[r];
        for c in 0..cols {
            let nc = f64::from(n[c]);
            d_in.push((istd * (d_norm[c] - mean_dn - nc * mean_dn_n)) as f32);
        }
    }
    (
        Matrix::from_raw(rows, cols, d_in),
        d_gain.into_iter().map(|v| v as f32).collect(),
        d_bias.into_iter().map(|v| v as f32).collect(),
    )
}
