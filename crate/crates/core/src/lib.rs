//! Numerical core for fusing frame-level speech representation streams.
//!
//! A fine-tuned reference embedding stream is combined with a *delta* stream
//! (fine-tuned minus pre-trained embeddings of a second encoder) by one of
//! several [`fusion`] operators, a linear [`head::CtcHead`] is trained on the
//! frozen fused features with [`ctc`] loss, and [`similarity`] quantifies how
//! related two representation sets are via CCA and PWCCA.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, dataset
//! loading and the command line live in the companion `repfuse` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod ctc;
pub mod error;
pub mod fusion;
pub mod head;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod sequence;
pub mod similarity;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use fusion::{FusionKind, FusionParams};
pub use sequence::{compute_delta, EmbeddingSequence, StreamKey, Variant};
pub use tensor::Matrix;
pub use text::{LabelSeq, Vocab};
