//! Single-block cross-attention fusion: the reference stream queries the
//! delta stream, and the attended values are added back onto the reference
//! through a residual layer norm.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    hconcat, layer_norm_backward, layer_norm_forward, matmul, matmul_nt, matmul_tn, softmax_rows,
    LayerNormCache, Matrix, LAYER_NORM_EPS,
};

/// Head count used when none is configured.
pub const DEFAULT_HEADS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln_gain: Vec<f32>,
    pub ln_bias: Vec<f32>,
    pub heads: usize,
}

impl AttentionParams {
    /// Projections drawn from `U(-1/√d, 1/√d)`, layer norm at identity.
    pub fn init<R: Rng + ?Sized>(d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(d, heads)?;
        let bound = 1.0 / libm::sqrtf(d as f32);
        let mut proj = || Matrix::from_fn(d, d, |_, _| rng.random_range(-bound..bound));
        Ok(Self {
            wq: proj(),
            wk: proj(),
            wv: proj(),
            wo: proj(),
            ln_gain: alloc::vec![1.0; d],
            ln_bias: alloc::vec![0.0; d],
            heads,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.dim();
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            ln_gain: alloc::vec![0.0; d],
            ln_bias: alloc::vec![0.0; d],
            heads: self.heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_heads(d, self.heads)?;
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if m.shape() != (d, d) {
                return Err(Error::Config(alloc::format!(
                    "attention projection {name} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if self.ln_gain.len() != d || self.ln_bias.len() != d {
            return Err(Error::Config(alloc::format!(
                "layer norm affine must have length {d}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(alloc::format!(
            "cross-attention needs d divisible by heads (d = {d}, heads = {heads})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    reference: Matrix,
    delta: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Row-softmaxed attention weights, one `T×T` matrix per head.
    probs: Vec<Matrix>,
    heads_out: Matrix,
    ln: LayerNormCache,
}

/// `Z = LayerNorm(ref + MultiHead(ref·Wq, delta·Wk, delta·Wv)·Wo)`.
pub fn fuse_xattn(reference: &Matrix, delta: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    forward(reference, delta, params).map(|(z, _)| z)
}

pub(crate) fn forward(
    reference: &Matrix,
    delta: &Matrix,
    p: &AttentionParams,
) -> Result<(Matrix, AttentionCache)> {
    if reference.shape() != delta.shape() {
        return Err(shape_err("fuse_xattn", reference.shape(), delta.shape()));
    }
    p.validate()?;
    if reference.cols() != p.dim() {
        return Err(shape_err("fuse_xattn", reference.shape(), p.wq.shape()));
    }
    let q = matmul(reference, &p.wq)?;
    let k = matmul(delta, &p.wk)?;
    let v = matmul(delta, &p.wv)?;
    let dh = p.head_dim();
    let scale = 1.0 / libm::sqrtf(dh as f32);

    let mut probs = Vec::with_capacity(p.heads);
    let mut heads_out: Option<Matrix> = None;
    for h in 0..p.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let scores = matmul_nt(&q.col_slice(lo, hi), &k.col_slice(lo, hi))?.scale(scale);
        let attn = softmax_rows(&scores);
        let out = matmul(&attn, &v.col_slice(lo, hi))?;
        heads_out = Some(match heads_out {
            None => out,
            Some(acc) => hconcat(&acc, &out)?,
        });
        probs.push(attn);
    }
    let heads_out = heads_out.expect("at least one head");
    let attended = matmul(&heads_out, &p.wo)?;
    let residual = reference.add(&attended)?;
    let (z, ln) = layer_norm_forward(&residual, &p.ln_gain, &p.ln_bias, LAYER_NORM_EPS)?;
    Ok((
        z,
        AttentionCache {
            reference: reference.clone(),
            delta: delta.clone(),
            q,
            k,
            v,
            probs,
            heads_out,
            ln,
        },
    ))
}

/// Returns `(param_grads, d_reference, d_delta)`.
pub(crate) fn backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    d_out: &Matrix,
) -> Result<(AttentionParams, Matrix, Matrix)> {
    let (d_residual, d_gain, d_bias) = layer_norm_backward(&cache.ln, &p.ln_gain, d_out);
    let d_wo = matmul_tn(&cache.heads_out, &d_residual)?;
    let d_heads_out = matmul_nt(&d_residual, &p.wo)?;

    let t = cache.q.rows();
    let d = p.dim();
    let dh = p.head_dim();
    let scale = 1.0 / libm::sqrtf(dh as f32);
    let mut d_q = Matrix::zeros(t, d);
    let mut d_k = Matrix::zeros(t, d);
    let mut d_v = Matrix::zeros(t, d);
    for (h, attn) in cache.probs.iter().enumerate() {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let d_oh = d_heads_out.col_slice(lo, hi);
        let vh = cache.v.col_slice(lo, hi);
        let d_attn = matmul_nt(&d_oh, &vh)?;
        let d_vh = matmul_tn(attn, &d_oh)?;
        let d_scores = softmax_backward(attn, &d_attn).scale(scale);
        let d_qh = matmul(&d_scores, &cache.k.col_slice(lo, hi))?;
        let d_kh = matmul_tn(&d_scores, &cache.q.col_slice(lo, hi))?;
        write_cols(&mut d_q, &d_qh, lo);
        write_cols(&mut d_k, &d_kh, lo);
        write_cols(&mut d_v, &d_vh, lo);
    }

    let grads = AttentionParams {
        wq: matmul_tn(&cache.reference, &d_q)?,
        wk: matmul_tn(&cache.delta, &d_k)?,
        wv: matmul_tn(&cache.delta, &d_v)?,
        wo: d_wo,
        ln_gain: d_gain,
        ln_bias: d_bias,
        heads: p.heads,
    };
    let mut d_reference = d_residual;
    d_reference.add_scaled(&matmul_nt(&d_q, &p.wq)?, 1.0)?;
    let mut d_delta = matmul_nt(&d_k, &p.wk)?;
    d_delta.add_scaled(&matmul_nt(&d_v, &p.wv)?, 1.0)?;
    Ok((grads, d_reference, d_delta))
}

// Jacobian-vector product of a row softmax: s ⊙ (g − ⟨g, s⟩).
fn softmax_backward(s: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        let (sr, gr) = (s.row(r), g.row(r));
        let inner: f64 = sr.iter().zip(gr).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        for (o, (&a, &b)) in out.row_mut(r).iter_mut().zip(sr.iter().zip(gr)) {
            *o = (f64::from(a) * (f64::from(b) - inner)) as f32;
        }
    }
    out
}

fn write_cols(dst: &mut Matrix, src: &Matrix, offset: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[offset..offset + src.cols()].copy_from_slice(src.row(r));
    }
}
