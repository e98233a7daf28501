//! Canonical correlation analysis between two frame-aligned views and the
//! projection-weighted summary score (PWCCA).
//!
//! Both views are mean-centered, their covariances ridge-regularized by
//! `reg_eps·I`, and the canonical correlations are the singular values of
//! `Σxx^{-1/2} Σxy Σyy^{-1/2}`, clamped to `[0, 1]`.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat64};
use crate::tensor::Matrix;

pub const DEFAULT_REG_EPS: f64 = 1e-8;
pub const DEFAULT_MAX_FRAMES: usize = 100_000;

// Correlations below this are treated as exactly zero when recovering the
// partner singular vector.
const ZERO_CORR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CcaResult {
    /// Canonical correlations, descending, `k = min(d₁, d₂)` of them.
    pub correlations: Vec<f64>,
    /// Canonical directions for the first view, one per column (`d₁×k`),
    /// scaled so each canonical variate has unit variance.
    pub x_directions: Mat64,
    /// Canonical directions for the second view (`d₂×k`).
    pub y_directions: Mat64,
    /// Set when a covariance has a direction whose variance is at the level
    /// of the ridge term.
    pub rank_warning: bool,
    centered_x: Mat64,
}

fn center(m: &Matrix) -> Mat64 {
    let n = m.rows() as f64;
    let means: Vec<f64> = m.col_sums().into_iter().map(|s| s / n).collect();
    Mat64::from_fn(m.rows(), m.cols(), |r, c| f64::from(m.get(r, c)) - means[c])
}

// Aᵀ B.
fn gram(a: &Mat64, b: &Mat64) -> Mat64 {
    let mut out = Mat64::zeros(a.cols(), b.cols());
    let width = b.cols();
    let mut acc = alloc::vec![0.0f64; a.cols() * width];
    for r in 0..a.rows() {
        let rb = b.row(r);
        for (i, &x) in a.row(r).iter().enumerate() {
            for (o, &y) in acc[i * width..(i + 1) * width].iter_mut().zip(rb) {
                *o += x * y;
            }
        }
    }
    for i in 0..a.cols() {
        for j in 0..width {
            out.set(i, j, acc[i * width + j]);
        }
    }
    out
}

// Aᵀ B / (n − 1).
fn cross_cov(a: &Mat64, b: &Mat64) -> Mat64 {
    let g = gram(a, b);
    let denom = (a.rows().max(2) - 1) as f64;
    Mat64::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) / denom)
}

// Σ^{-1/2} of a regularized covariance; also reports near-singularity.
fn inverse_sqrt(cov: &Mat64, reg_eps: f64) -> Result<(Mat64, bool)> {
    let reg = Mat64::from_fn(cov.rows(), cov.cols(), |r, c| {
        cov.get(r, c) + if r == c { reg_eps } else { 0.0 }
    });
    let eig = sym_eigen(&reg)?;
    let floor = reg_eps.max(f64::MIN_POSITIVE);
    let smallest = eig.values.last().copied().unwrap_or(0.0);
    let warn = smallest <= 2.0 * floor || smallest <= 1e-12 * eig.values[0].abs();
    Ok((eig.reconstruct_with(|l| 1.0 / libm::sqrt(l.max(floor))), warn))
}

// Partner singular vectors M·u_i / ρ_i for the first k columns.
fn partner_vectors(m: &Mat64, vectors: &Mat64, values: &[f64], k: usize) -> Mat64 {
    let prod = m.matmul(vectors).expect("conformant");
    Mat64::from_fn(prod.rows(), k, |r, c| {
        let rho = values[c];
        if rho > ZERO_CORR {
            prod.get(r, c) / rho
        } else {
            0.0
        }
    })
}

/// Canonical correlations between `x` (`n×d₁`) and `y` (`n×d₂`).
pub fn cca_correlations(x: &Matrix, y: &Matrix, reg_eps: f64) -> Result<CcaResult> {
    if x.rows() != y.rows() {
        return Err(Error::Pairing(alloc::format!(
            "views are not frame-aligned: {} vs {} rows",
            x.rows(),
            y.rows()
        )));
    }
    let n = x.rows();
    let dims = x.cols().max(y.cols());
    if n <= dims {
        return Err(Error::SampleSize { samples: n, dims });
    }
    if !(reg_eps >= 0.0 && reg_eps.is_finite()) {
        return Err(Error::Config(alloc::format!("reg_eps must be >= 0, got {reg_eps}")));
    }
    let xc = center(x);
    let yc = center(y);
    let (wx, warn_x) = inverse_sqrt(&cross_cov(&xc, &xc), reg_eps)?;
    let (wy, warn_y) = inverse_sqrt(&cross_cov(&yc, &yc), reg_eps)?;
    let whitened = wx.matmul(&cross_cov(&xc, &yc))?.matmul(&wy)?;

    let (d1, d2) = (x.cols(), y.cols());
    let k = d1.min(d2);
    let (rho, u_left, u_right) = if d1 <= d2 {
        let eig = sym_eigen(&whitened.matmul(&whitened.transpose())?)?;
        let rho = correlations_from(&eig.values, k);
        let right = partner_vectors(&whitened.transpose(), &eig.vectors, &rho, k);
        (rho, first_columns(&eig.vectors, k), right)
    } else {
        let eig = sym_eigen(&whitened.transpose().matmul(&whitened)?)?;
        let rho = correlations_from(&eig.values, k);
        let left = partner_vectors(&whitened, &eig.vectors, &rho, k);
        (rho, left, first_columns(&eig.vectors, k))
    };

    Ok(CcaResult {
        correlations: rho,
        x_directions: wx.matmul(&u_left)?,
        y_directions: wy.matmul(&u_right)?,
        rank_warning: warn_x || warn_y,
        centered_x: xc,
    })
}

fn correlations_from(eigenvalues: &[f64], k: usize) -> Vec<f64> {
    // Monotone in λ, so the descending eigenvalue order carries over.
    eigenvalues[..k]
        .iter()
        .map(|&l| libm::sqrt(l.max(0.0)).min(1.0))
        .collect()
}

fn first_columns(m: &Mat64, k: usize) -> Mat64 {
    Mat64::from_fn(m.rows(), k, |r, c| m.get(r, c))
}

impl CcaResult {
    /// Projection weights over the canonical components of the first view:
    /// `α̃_i = Σ_j |⟨h_i, x̃_j⟩|` with `h_i = X̃ v_i`, normalized to sum to 1.
    pub fn projection_weights(&self) -> Result<Vec<f64>> {
        // ⟨h_i, x̃_j⟩ = (X̃ᵀ X̃ v_i)_j
        let inner = gram(&self.centered_x, &self.centered_x).matmul(&self.x_directions)?;
        let raw: Vec<f64> = (0..inner.cols())
            .map(|i| (0..inner.rows()).map(|j| inner.get(j, i).abs()).sum())
            .collect();
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain(
                "projection weights undefined: first view has no variance".into(),
            ));
        }
        Ok(raw.into_iter().map(|a| a / total).collect())
    }

    pub fn pwcca(&self) -> Result<f64> {
        let alpha = self.projection_weights()?;
        Ok(alpha.iter().zip(&self.correlations).map(|(a, r)| a * r).sum())
    }

    pub fn mean_correlation(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len().max(1) as f64
    }
}

/// PWCCA similarity, weighted by the first view.
pub fn pwcca_score(x: &Matrix, y: &Matrix, reg_eps: f64) -> Result<f64> {
    cca_correlations(x, y, reg_eps)?.pwcca()
}

/// Sorted frame indices kept when capping `total` frames at `max_frames`.
pub fn subsample_indices(total: usize, max_frames: usize, seed: u64) -> Vec<usize> {
    if total <= max_frames {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, total, max_frames).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSimilarity {
    pub layer: usize,
    pub canonical_corrs: Vec<f64>,
    pub pwcca: f64,
    pub n_frames: usize,
    pub rank_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub model_a: alloc::string::String,
    pub model_b: alloc::string::String,
    pub per_layer: Vec<LayerSimilarity>,
}

/// Similarity for one layer from the concatenated frames of both views,
/// subsampled with the same indices on each side.
pub fn layer_similarity(
    layer: usize,
    x: &Matrix,
    y: &Matrix,
    max_frames: usize,
    seed: u64,
    reg_eps: f64,
) -> Result<LayerSimilarity> {
    if x.rows() != y.rows() {
        return Err(Error::Pairing(alloc::format!(
            "layer {layer}: views have {} and {} frames",
            x.rows(),
            y.rows()
        )));
    }
    let keep = subsample_indices(x.rows(), max_frames, seed);
    let (xs, ys) = if keep.len() == x.rows() {
        (x.clone(), y.clone())
    } else {
        (x.select_rows(&keep), y.select_rows(&keep))
    };
    let cca = cca_correlations(&xs, &ys, reg_eps)?;
    Ok(LayerSimilarity {
        layer,
        pwcca: cca.pwcca()?,
        n_frames: keep.len(),
        rank_warning: cca.rank_warning,
        canonical_corrs: cca.correlations,
    })
}
