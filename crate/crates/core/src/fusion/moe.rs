//! Frame-wise two-expert gating. Column 0 of the gate matrix weights the
//! reference (fine-tuned) stream, column 1 the delta stream.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, softmax_rows, Matrix};

/// `softmax(ref · W)` row by row; `W` is `d×2`.
pub fn moe_gate(reference: &Matrix, gate_weights: &Matrix) -> Result<Matrix> {
    if gate_weights.cols() != 2 {
        return Err(shape_err("moe_gate", reference.shape(), gate_weights.shape()));
    }
    let logits = matmul(reference, gate_weights)?;
    Ok(softmax_rows(&logits))
}

/// Per-frame convex combination `g₀·ref_t + g₁·delta_t`.
pub fn moe_fuse(reference: &Matrix, delta: &Matrix, gates: &Matrix) -> Result<Matrix> {
    if reference.shape() != delta.shape() {
        return Err(shape_err("moe_fuse", reference.shape(), delta.shape()));
    }
    if gates.shape() != (reference.rows(), 2) {
        return Err(shape_err("moe_fuse", reference.shape(), gates.shape()));
    }
    let mut out = Matrix::zeros(reference.rows(), reference.cols());
    for t in 0..reference.rows() {
        let (g_ref, g_delta) = (gates.get(t, 0), gates.get(t, 1));
        for ((o, &r), &d) in out.row_mut(t).iter_mut().zip(reference.row(t)).zip(delta.row(t)) {
            *o = g_ref * r + g_delta * d;
        }
    }
    Ok(out)
}

/// Mean reference-stream gate weight over every frame of every utterance.
pub fn mean_gate_weight(gates_per_utt: &[Matrix]) -> Result<f64> {
    let frames: usize = gates_per_utt.iter().map(Matrix::rows).sum();
    if frames == 0 {
        return Err(Error::Domain("mean gate weight of zero frames".into()));
    }
    let total: f64 = gates_per_utt
        .iter()
        .flat_map(|g| (0..g.rows()).map(move |t| f64::from(g.get(t, 0))))
        .sum();
    Ok(total / frames as f64)
}

#[derive(Debug, Clone)]
pub struct MoeCache {
    reference: Matrix,
    delta: Matrix,
    gates: Matrix,
}

impl MoeCache {
    pub fn gates(&self) -> &Matrix {
        &self.gates
    }
}

pub(crate) fn forward(reference: &Matrix, delta: &Matrix, w: &Matrix) -> Result<(Matrix, MoeCache)> {
    let gates = moe_gate(reference, w)?;
    let z = moe_fuse(reference, delta, &gates)?;
    Ok((
        z,
        MoeCache {
            reference: reference.clone(),
            delta: delta.clone(),
            gates,
        },
    ))
}

/// Returns `(d_W, d_reference, d_delta)`.
pub(crate) fn backward(w: &Matrix, cache: &MoeCache, d_out: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let (t_len, d) = cache.reference.shape();
    let mut d_logits = Vec::with_capacity(t_len * 2);
    let mut d_reference = Matrix::zeros(t_len, d);
    let mut d_delta = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        let dz = d_out.row(t);
        let r = cache.reference.row(t);
        let dl = cache.delta.row(t);
        let g0 = f64::from(cache.gates.get(t, 0));
        let g1 = f64::from(cache.gates.get(t, 1));
        let dg0: f64 = dz.iter().zip(r).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        let dg1: f64 = dz.iter().zip(dl).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
        let inner = g0 * dg0 + g1 * dg1;
        d_logits.push((g0 * (dg0 - inner)) as f32);
        d_logits.push((g1 * (dg1 - inner)) as f32);
        for (o, &g) in d_reference.row_mut(t).iter_mut().zip(dz) {
            *o = (g0 * f64::from(g)) as f32;
        }
        for (o, &g) in d_delta.row_mut(t).iter_mut().zip(dz) {
            *o = (g1 * f64::from(g)) as f32;
        }
    }
    let d_logits = Matrix::new(t_len, 2, d_logits)?;
    let d_w = matmul_tn(&cache.reference, &d_logits)?;
    d_reference.add_scaled(&matmul_nt(&d_logits, w)?, 1.0)?;
    Ok((d_w, d_reference, d_delta))
}
