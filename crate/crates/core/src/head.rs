use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{log_softmax_rows, matmul, matmul_nt, matmul_tn, Matrix};
use crate::text::Vocab;

/// Linear projection from fused features to CTC class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcHead {
    pub weights: Matrix,
    pub bias: Vec<f32>,
    pub vocab: Vocab,
}

impl CtcHead {
    /// All-zero head: every frame starts as a uniform distribution.
    pub fn zeros(input_dim: usize, vocab: Vocab) -> Self {
        let v = vocab.len();
        Self {
            weights: Matrix::zeros(input_dim, v),
            bias: vec![0.0; v],
            vocab,
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f32>, vocab: Vocab) -> Result<Self> {
        if weights.cols() != vocab.len() || bias.len() != vocab.len() {
            return Err(Error::Config(alloc::format!(
                "head is {}x{} with bias of {} for a vocabulary of {}",
                weights.rows(),
                weights.cols(),
                bias.len(),
                vocab.len()
            )));
        }
        Ok(Self { weights, bias, vocab })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.input_dim() {
            return Err(shape_err("CtcHead::logits", features.shape(), self.weights.shape()));
        }
        let mut z = matmul(features, &self.weights)?;
        for t in 0..z.rows() {
            for (x, &b) in z.row_mut(t).iter_mut().zip(&self.bias) {
                *x += b;
            }
        }
        Ok(z)
    }

    pub fn log_probs(&self, features: &Matrix) -> Result<Matrix> {
        self.logits(features).map(|z| log_softmax_rows(&z))
    }

    /// Returns `(d_weights, d_bias, d_features)` for a gradient w.r.t. the
    /// logits.
    pub fn backward(&self, features: &Matrix, d_logits: &Matrix) -> Result<(Matrix, Vec<f32>, Matrix)> {
        let d_w = matmul_tn(features, d_logits)?;
        let d_b = d_logits.col_sums().into_iter().map(|v| v as f32).collect();
        let d_x = matmul_nt(d_logits, &self.weights)?;
        Ok((d_w, d_b, d_x))
    }
}
