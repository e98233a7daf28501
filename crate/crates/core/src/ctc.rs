//! Connectionist temporal classification over `T×V` log-probability
//! matrices, blank at index 0.
//!
//! Loss and gradient come from the usual forward–backward recursion over the
//! blank-interleaved target `[∅, l₁, ∅, l₂, …, ∅]`, evaluated in log space in
//! `f64`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::text::{LabelSeq, Vocab, BLANK};

/// Accepted deviation of `Σ exp(log_probs)` from 1 per frame.
pub const NORMALIZATION_TOL: f64 = 1e-5;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

fn extended(target: &LabelSeq) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(BLANK);
    for &l in target.ids() {
        ext.push(l);
        ext.push(BLANK);
    }
    ext
}

// A skip from s-2 to s is allowed when s is a label that differs from the
// label two positions back.
#[inline]
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn validate(log_probs: &Matrix, target: &LabelSeq) -> Result<()> {
    let v = log_probs.cols();
    if let Some(&bad) = target.ids().iter().find(|&&i| i == BLANK || i >= v) {
        return Err(Error::Domain(alloc::format!(
            "target label {bad} outside [1, {}]",
            v.saturating_sub(1)
        )));
    }
    for (t, row) in log_probs.row_iter().enumerate() {
        let total: f64 = row.iter().map(|&x| libm::exp(f64::from(x))).sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Domain(alloc::format!(
                "frame {t} probabilities sum to {total}, expected log-probabilities"
            )));
        }
    }
    let required = target.min_frames();
    if log_probs.rows() < required {
        return Err(Error::Infeasible {
            target_len: target.len(),
            required,
            frames: log_probs.rows(),
        });
    }
    Ok(())
}

fn forward_table(lp: &Matrix, ext: &[usize]) -> Vec<f64> {
    let (t_len, s_len) = (lp.rows(), ext.len());
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = f64::from(lp.get(0, ext[0]));
    if s_len > 1 {
        alpha[1] = f64::from(lp.get(0, ext[1]));
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(ext, s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = acc + f64::from(lp.get(t, ext[s]));
        }
    }
    alpha
}

fn backward_table(lp: &Matrix, ext: &[usize]) -> Vec<f64> {
    let (t_len, s_len) = (lp.rows(), ext.len());
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = f64::from(lp.get(t_len - 1, ext[s_len - 1]));
    if s_len > 1 {
        beta[last + s_len - 2] = f64::from(lp.get(t_len - 1, ext[s_len - 2]));
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            cur[s] = acc + f64::from(lp.get(t, ext[s]));
        }
    }
    beta
}

fn log_likelihood(alpha: &[f64], t_len: usize, s_len: usize) -> f64 {
    let last = &alpha[(t_len - 1) * s_len..];
    if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// Negative log-probability of `target` under `log_probs`.
///
/// Fails with [`Error::Infeasible`] when `T` is shorter than the target's
/// minimum alignment length; callers treat that as an infinite loss.
pub fn ctc_loss(log_probs: &Matrix, target: &LabelSeq) -> Result<f64> {
    validate(log_probs, target)?;
    let ext = extended(target);
    let alpha = forward_table(log_probs, &ext);
    Ok(-log_likelihood(&alpha, log_probs.rows(), ext.len()))
}

/// Gradient of [`ctc_loss`] with respect to the pre-softmax logits that
/// produced `log_probs`: `softmax − alignment posterior` per frame.
pub fn ctc_grad(log_probs: &Matrix, target: &LabelSeq) -> Result<Matrix> {
    ctc_loss_and_grad(log_probs, target).map(|(_, g)| g)
}

pub fn ctc_loss_and_grad(log_probs: &Matrix, target: &LabelSeq) -> Result<(f64, Matrix)> {
    validate(log_probs, target)?;
    let ext = extended(target);
    let (t_len, v) = log_probs.shape();
    let s_len = ext.len();
    let alpha = forward_table(log_probs, &ext);
    let beta = backward_table(log_probs, &ext);
    let log_z = log_likelihood(&alpha, t_len, s_len);

    let mut grad = Matrix::zeros(t_len, v);
    let mut posterior = vec![f64::NEG_INFINITY; v];
    for t in 0..t_len {
        posterior.fill(f64::NEG_INFINITY);
        for (s, &label) in ext.iter().enumerate() {
            let i = t * s_len + s;
            // alpha and beta both include the emission at (t, s).
            let term = alpha[i] + beta[i] - f64::from(log_probs.get(t, label));
            posterior[label] = log_add(posterior[label], term);
        }
        for (k, g) in grad.row_mut(t).iter_mut().enumerate() {
            let p = libm::exp(f64::from(log_probs.get(t, k)));
            *g = (p - libm::exp(posterior[k] - log_z)) as f32;
        }
    }
    Ok((-log_z, grad))
}

/// Per-frame argmax (lowest index wins ties), repeats collapsed, blanks
/// removed.
pub fn greedy_labels(log_probs: &Matrix) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.row_iter() {
        let mut best = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        if Some(best) != prev && best != BLANK {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

pub fn greedy_decode(log_probs: &Matrix, vocab: &Vocab) -> String {
    vocab.decode(&greedy_labels(log_probs))
}
