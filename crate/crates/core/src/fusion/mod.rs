//! Fusion of a reference embedding stream with a delta stream.
//!
//! Every operator has a forward pass that keeps what its backward pass needs
//! and a backward pass producing gradients for its parameters and for both
//! input streams.

mod moe;
mod xattn;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{hconcat, Matrix};

pub use moe::{mean_gate_weight, moe_fuse, moe_gate, MoeCache};
pub use xattn::{fuse_xattn, AttentionCache, AttentionParams, DEFAULT_HEADS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    /// Reference stream only; the delta stream is ignored.
    Reference,
    Concat,
    Weighted,
    CrossAttention,
    Moe,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Reference,
        FusionKind::Concat,
        FusionKind::Weighted,
        FusionKind::CrossAttention,
        FusionKind::Moe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Reference => "ref",
            FusionKind::Concat => "concat",
            FusionKind::Weighted => "weighted",
            FusionKind::CrossAttention => "xattn",
            FusionKind::Moe => "moe",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FusionKind::Reference => 0,
            FusionKind::Concat => 1,
            FusionKind::Weighted => 2,
            FusionKind::CrossAttention => 3,
            FusionKind::Moe => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn uses_delta(self) -> bool {
        self != FusionKind::Reference
    }

    /// Width of the fused features for the given stream widths.
    pub fn output_dim(self, d_ref: usize, d_delta: usize) -> usize {
        match self {
            FusionKind::Concat => d_ref + d_delta,
            _ => d_ref,
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(alloc::format!(
                    "unknown fusion kind {s:?} (expected ref, concat, weighted, xattn or moe)"
                ))
            })
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + libm::exp(-f64::from(x)))) as f32
}

/// Learnable parameters of a fusion operator. The same type holds
/// gradients, which have the identical layout.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionParams {
    Reference,
    Concat,
    /// `λ = sigmoid(theta)`.
    Weighted { theta: f32 },
    CrossAttention(AttentionParams),
    /// `d×2` gate projection.
    Moe { gate: Matrix },
}

impl FusionParams {
    /// Initial parameters: `theta = 0`, attention projections uniform in
    /// `±1/√d` with identity layer norm, and a zero gate matrix.
    pub fn init<R: Rng + ?Sized>(
        kind: FusionKind,
        d_ref: usize,
        d_delta: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kind.uses_delta() && kind != FusionKind::Concat && d_ref != d_delta {
            return Err(Error::Config(alloc::format!(
                "{kind} fusion needs equal stream widths, got {d_ref} and {d_delta}"
            )));
        }
        Ok(match kind {
            FusionKind::Reference => FusionParams::Reference,
            FusionKind::Concat => FusionParams::Concat,
            FusionKind::Weighted => FusionParams::Weighted { theta: 0.0 },
            FusionKind::CrossAttention => {
                FusionParams::CrossAttention(AttentionParams::init(d_ref, heads, rng)?)
            }
            FusionKind::Moe => FusionParams::Moe {
                gate: Matrix::zeros(d_ref, 2),
            },
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionParams::Reference => FusionKind::Reference,
            FusionParams::Concat => FusionKind::Concat,
            FusionParams::Weighted { .. } => FusionKind::Weighted,
            FusionParams::CrossAttention(_) => FusionKind::CrossAttention,
            FusionParams::Moe { .. } => FusionKind::Moe,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            FusionParams::Weighted { .. } => FusionParams::Weighted { theta: 0.0 },
            FusionParams::CrossAttention(p) => FusionParams::CrossAttention(p.zeros_like()),
            FusionParams::Moe { gate } => FusionParams::Moe {
                gate: Matrix::zeros(gate.rows(), gate.cols()),
            },
            other => other.clone(),
        }
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[f32]> {
        match self {
            FusionParams::Reference | FusionParams::Concat => Vec::new(),
            FusionParams::Weighted { theta } => vec![core::slice::from_ref(theta)],
            FusionParams::CrossAttention(p) => vec![
                p.wq.as_slice(),
                p.wk.as_slice(),
                p.wv.as_slice(),
                p.wo.as_slice(),
                &p.ln_gain,
                &p.ln_bias,
            ],
            FusionParams::Moe { gate } => vec![gate.as_slice()],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            FusionParams::Reference | FusionParams::Concat => Vec::new(),
            FusionParams::Weighted { theta } => vec![core::slice::from_mut(theta)],
            FusionParams::CrossAttention(p) => vec![
                p.wq.as_mut_slice(),
                p.wk.as_mut_slice(),
                p.wv.as_mut_slice(),
                p.wo.as_mut_slice(),
                &mut p.ln_gain,
                &mut p.ln_bias,
            ],
            FusionParams::Moe { gate } => vec![gate.as_mut_slice()],
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, reference: &Matrix, delta: &Matrix) -> Result<(Matrix, FusionCache)> {
        Ok(match self {
            FusionParams::Reference => (reference.clone(), FusionCache::Reference {
                delta_shape: delta.shape(),
            }),
            FusionParams::Concat => (
                fuse_concat(reference, delta)?,
                FusionCache::Concat {
                    d_ref: reference.cols(),
                },
            ),
            FusionParams::Weighted { theta } => (
                fuse_weighted(reference, delta, *theta)?,
                FusionCache::Weighted {
                    diff: reference.sub(delta)?,
                },
            ),
            FusionParams::CrossAttention(p) => {
                let (z, cache) = xattn::forward(reference, delta, p)?;
                (z, FusionCache::CrossAttention(cache))
            }
            FusionParams::Moe { gate } => {
                let (z, cache) = moe::forward(reference, delta, gate)?;
                (z, FusionCache::Moe(cache))
            }
        })
    }

    /// Backpropagates `d_out` (gradient w.r.t. the fused features).
    pub fn backward(&self, cache: &FusionCache, d_out: &Matrix) -> Result<FusionGrads> {
        match (self, cache) {
            (FusionParams::Reference, FusionCache::Reference { delta_shape }) => Ok(FusionGrads {
                params: FusionParams::Reference,
                d_reference: d_out.clone(),
                d_delta: Matrix::zeros(delta_shape.0, delta_shape.1),
            }),
            (FusionParams::Concat, FusionCache::Concat { d_ref }) => Ok(FusionGrads {
                params: FusionParams::Concat,
                d_reference: d_out.col_slice(0, *d_ref),
                d_delta: d_out.col_slice(*d_ref, d_out.cols()),
            }),
            (FusionParams::Weighted { theta }, FusionCache::Weighted { diff }) => {
                let lambda = f64::from(sigmoid(*theta));
                let inner: f64 = d_out
                    .as_slice()
                    .iter()
                    .zip(diff.as_slice())
                    .map(|(&g, &x)| f64::from(g) * f64::from(x))
                    .sum();
                Ok(FusionGrads {
                    params: FusionParams::Weighted {
                        theta: (inner * lambda * (1.0 - lambda)) as f32,
                    },
                    d_reference: d_out.scale(lambda as f32),
                    d_delta: d_out.scale((1.0 - lambda) as f32),
                })
            }
            (FusionParams::CrossAttention(p), FusionCache::CrossAttention(c)) => {
                let (grads, d_reference, d_delta) = xattn::backward(p, c, d_out)?;
                Ok(FusionGrads {
                    params: FusionParams::CrossAttention(grads),
                    d_reference,
                    d_delta,
                })
            }
            (FusionParams::Moe { gate }, FusionCache::Moe(c)) => {
                let (d_gate, d_reference, d_delta) = moe::backward(gate, c, d_out)?;
                Ok(FusionGrads {
                    params: FusionParams::Moe { gate: d_gate },
                    d_reference,
                    d_delta,
                })
            }
            _ => Err(Error::Config("fusion cache does not match parameters".into())),
        }
    }
}

/// Intermediate values of a fusion forward pass.
#[derive(Debug, Clone)]
pub enum FusionCache {
    Reference { delta_shape: (usize, usize) },
    Concat { d_ref: usize },
    Weighted { diff: Matrix },
    CrossAttention(AttentionCache),
    Moe(MoeCache),
}

#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub params: FusionParams,
    pub d_reference: Matrix,
    pub d_delta: Matrix,
}

/// `[ref ; delta]` along the feature axis. Widths may differ.
pub fn fuse_concat(reference: &Matrix, delta: &Matrix) -> Result<Matrix> {
    hconcat(reference, delta).map_err(|_| shape_err("fuse_concat", reference.shape(), delta.shape()))
}

/// `λ·ref + (1 − λ)·delta` with `λ = sigmoid(theta)`.
pub fn fuse_weighted(reference: &Matrix, delta: &Matrix, theta: f32) -> Result<Matrix> {
    let lambda = f64::from(sigmoid(theta));
    reference.zip_map(delta, "fuse_weighted", |r, d| {
        (lambda * f64::from(r) + (1.0 - lambda) * f64::from(d)) as f32
    })
}
