use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::ADAM
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::ADAM),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(alloc::format!(
                "unknown optimizer {other:?} (expected adam or sgd)"
            ))),
        }
    }
}

/// First-order optimizer over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, sizes: &[usize]) -> Self {
        let moments = || sizes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            kind,
            lr,
            step: 0,
            first: moments(),
            second: moments(),
        }
    }

    /// Applies one update. `grads[i]` must match `params[i]` in length.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &dx) in p.iter_mut().zip(g) {
                        *x = (f64::from(*x) - self.lr * dx) as f32;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let c1 = 1.0 - libm::pow(beta1, f64::from(t));
                let c2 = 1.0 - libm::pow(beta2, f64::from(t));
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (x, &dx)) in p.iter_mut().zip(g).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * dx;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * dx * dx;
                        let update = (m[j] / c1) / (libm::sqrt(v[j] / c2) + eps);
                        *x = (f64::from(*x) - self.lr * update) as f32;
                    }
                }
            }
        }
    }
}
