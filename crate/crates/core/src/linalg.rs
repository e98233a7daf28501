//! `f64` dense matrices and a cyclic Jacobi eigensolver for symmetric input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Matrix;

/// Relative tolerance on `|a_ij - a_ji|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 100;

/// Row-major `f64` matrix used where `f32` storage would cost accuracy
/// (covariances, whitening, eigenvectors).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Rounds to `f32` storage.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f32)
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat64 {
        Mat64::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Mat64) -> Result<Mat64> {
        if self.cols != other.rows {
            return Err(shape_err(
                "Mat64::matmul",
                (self.rows, self.cols),
                (other.rows, other.cols),
            ));
        }
        let mut out = Mat64::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in dst.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn sub(&self, other: &Mat64) -> Mat64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat64 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Eigen-decomposition of a symmetric matrix: `A = V diag(values) Vᵀ`,
/// eigenvalues sorted descending, eigenvectors stored as columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat64,
}

impl SymEigen {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Mat64 {
        let n = self.values.len();
        let scaled: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        Mat64::from_fn(n, n, |r, c| {
            (0..n)
                .map(|k| self.vectors.get(r, k) * scaled[k] * self.vectors.get(c, k))
                .sum()
        })
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
pub fn sym_eigen(a: &Mat64) -> Result<SymEigen> {
    let n = a.rows;
    if a.cols != n {
        return Err(shape_err("sym_eigen", (a.rows, a.cols), (a.cols, a.rows)));
    }
    let tol = SYMMETRY_TOL * a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(Error::Domain(alloc::format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    a.get(i, j),
                    a.get(j, i)
                )));
            }
        }
    }

    // Work on the symmetrized copy so tiny asymmetries do not bias the result.
    let mut m = Mat64::from_fn(n, n, |r, c| 0.5 * (a.get(r, c) + a.get(c, r)));
    let mut v = Mat64::identity(n);
    let scale = m.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum();
        if libm::sqrt(off) <= 1e-14 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Mat64::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymEigen { values, vectors })
}

// Applies the Jacobi rotation J(p, q) as M <- Jᵀ M J and V <- V J.
fn rotate(m: &mut Mat64, v: &mut Mat64, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows;
    for k in 0..n {
        let mkp = m.get(k, p);
        let mkq = m.get(k, q);
        m.set(k, p, c * mkp - s * mkq);
        m.set(k, q, s * mkp + c * mkq);
    }
    for k in 0..n {
        let mpk = m.get(p, k);
        let mqk = m.get(q, k);
        m.set(p, k, c * mpk - s * mqk);
        m.set(q, k, s * mpk + c * mqk);
    }
    m.set(p, q, 0.0);
    m.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Eigen-decomposition of a symmetric `f32` matrix. Computed in `f64`;
/// eigenvalues descending, eigenvectors as columns.
pub fn svd_symmetric(m: &Matrix) -> Result<(Vec<f64>, Mat64)> {
    let eig = sym_eigen(&Mat64::from_matrix(m))?;
    Ok((eig.values, eig.vectors))
}
