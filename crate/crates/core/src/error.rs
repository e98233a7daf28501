use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    Infeasible {
        target_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("sample size error: {samples} samples for {dims} dimensions")]
    SampleSize { samples: usize, dims: usize },
    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Error {
    Error::Shape {
        op,
        left: alloc::format!("{}x{}", left.0, left.1),
        right: alloc::format!("{}x{}", right.0, right.1),
    }
}
