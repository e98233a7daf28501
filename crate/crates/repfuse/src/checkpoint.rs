//! FUS1 checkpoints: a binary parameter file plus a JSON sidecar.
//!
//! ```text
//! "FUS1" | u32 version = 1 | u8 kind | u32 d_ref | u32 d_delta | u32 heads
//!        | u32 classes | u32 blocks | blocks...
//! block: u32 rows | u32 cols | rows·cols f32
//! ```
//! Blocks are the fusion tensors in their fixed order, then the head
//! weights (`d_fused×V`) and bias (`1×V`). Little-endian throughout. The
//! sidecar (`<name>.json` next to `<name>.fus`) holds the vocabulary, the
//! streams, the training history and the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use repfuse_core::fusion::AttentionParams;
use repfuse_core::head::CtcHead;
use repfuse_core::trainer::{EpochStats, FusionModel};
use repfuse_core::{FusionKind, FusionParams, Matrix, Vocab};
use serde::{Deserialize, Serialize};

use crate::emb::le_u32;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FUS1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub skipped: usize,
}

impl From<&EpochStats> for EpochRecord {
    fn from(s: &EpochStats) -> Self {
        Self {
            epoch: s.epoch,
            train_loss: s.train_loss,
            dev_loss: s.dev_loss,
            skipped: s.skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub fusion: String,
    pub vocab: Vec<char>,
    pub reference_stream: String,
    pub delta_stream: Option<String>,
    pub seed: u64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Resolved training configuration, echoed verbatim.
    pub config: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn push_block(out: &mut Vec<u8>, rows: usize, cols: usize, data: &[f32]) {
    debug_assert_eq!(rows * cols, data.len());
    push_u32(out, rows);
    push_u32(out, cols);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn block_shapes(model: &FusionModel) -> Vec<(usize, usize)> {
    let mut shapes = match &model.fusion {
        FusionParams::Reference | FusionParams::Concat => vec![],
        FusionParams::Weighted { .. } => vec![(1, 1)],
        FusionParams::CrossAttention(p) => {
            let d = p.dim();
            vec![(d, d), (d, d), (d, d), (d, d), (1, d), (1, d)]
        }
        FusionParams::Moe { gate } => vec![gate.shape()],
    };
    shapes.push(model.head.weights.shape());
    shapes.push((1, model.head.bias.len()));
    shapes
}

pub fn encode(model: &FusionModel, d_ref: usize, d_delta: usize) -> Vec<u8> {
    let heads = match &model.fusion {
        FusionParams::CrossAttention(p) => p.heads,
        _ => 0,
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION as usize);
    out.push(model.kind().code());
    push_u32(&mut out, d_ref);
    push_u32(&mut out, d_delta);
    push_u32(&mut out, heads);
    push_u32(&mut out, model.head.num_classes());
    let shapes = block_shapes(model);
    push_u32(&mut out, shapes.len());
    let mut tensors = model.fusion.tensors();
    tensors.push(model.head.weights.as_slice());
    tensors.push(&model.head.bias);
    for ((r, c), t) in shapes.into_iter().zip(tensors) {
        push_block(&mut out, r, c, t);
    }
    out
}

pub fn decode(bytes: &[u8], vocab: Vocab, path: &Path) -> Result<FusionModel> {
    let format = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(format("bad magic, expected \"FUS1\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format("truncated header".into()));
    }
    let version = le_u32(bytes, 4);
    if version != VERSION {
        return Err(format(format!("unsupported FUS1 version {version}")));
    }
    let kind = FusionKind::from_code(bytes[8]).ok_or_else(|| format(format!("unknown fusion kind {}", bytes[8])))?;
    let d_ref = le_u32(bytes, 9) as usize;
    let d_delta = le_u32(bytes, 13) as usize;
    let heads = le_u32(bytes, 17) as usize;
    let classes = le_u32(bytes, 21) as usize;
    let n_blocks = le_u32(bytes, 25) as usize;
    if classes != vocab.len() {
        return Err(format(format!("{classes} classes but sidecar vocabulary has {}", vocab.len())));
    }

    let mut at = HEADER_LEN;
    let mut blocks = Vec::with_capacity(n_blocks.min(16));
    for i in 0..n_blocks {
        if bytes.len() < at + 8 {
            return Err(format(format!("block {i} header truncated")));
        }
        let (rows, cols) = (le_u32(bytes, at) as usize, le_u32(bytes, at + 4) as usize);
        at += 8;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format(format!("block {i} is too large")))?;
        if bytes.len() - at < len {
            return Err(format(format!("block {i} payload truncated")));
        }
        let data = bytes[at..at + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        at += len;
        blocks.push(Matrix::new(rows, cols, data).map_err(|e| format(e.to_string()))?);
    }
    if at != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - at)));
    }

    let expect = |m: &Matrix, shape: (usize, usize), what: &str| -> Result<()> {
        if m.shape() != shape {
            return Err(format(format!("{what} is {:?}, expected {shape:?}", m.shape())));
        }
        Ok(())
    };
    let fusion_blocks = match kind {
        FusionKind::Reference | FusionKind::Concat => 0,
        FusionKind::Weighted | FusionKind::Moe => 1,
        FusionKind::CrossAttention => 6,
    };
    if blocks.len() != fusion_blocks + 2 {
        return Err(format(format!(
            "{kind} checkpoint needs {} blocks, found {}",
            fusion_blocks + 2,
            blocks.len()
        )));
    }
    let bias = blocks.pop().expect("counted");
    let weights = blocks.pop().expect("counted");
    let fused = kind.output_dim(d_ref, d_delta);
    expect(&weights, (fused, classes), "head weights")?;
    expect(&bias, (1, classes), "head bias")?;
    let mut it = blocks.into_iter();
    let fusion = match kind {
        FusionKind::Reference => FusionParams::Reference,
        FusionKind::Concat => FusionParams::Concat,
        FusionKind::Weighted => {
            let theta = it.next().expect("counted");
            expect(&theta, (1, 1), "theta")?;
            FusionParams::Weighted { theta: theta.get(0, 0) }
        }
        FusionKind::Moe => {
            let gate = it.next().expect("counted");
            expect(&gate, (d_ref, 2), "gate")?;
            FusionParams::Moe { gate }
        }
        FusionKind::CrossAttention => {
            let mut next = |shape, what| -> Result<Matrix> {
                let m = it.next().expect("counted");
                expect(&m, shape, what)?;
                Ok(m)
            };
            let d = d_ref;
            let p = AttentionParams {
                wq: next((d, d), "wq")?,
                wk: next((d, d), "wk")?,
                wv: next((d, d), "wv")?,
                wo: next((d, d), "wo")?,
                ln_gain: next((1, d), "ln_gain")?.into_vec(),
                ln_bias: next((1, d), "ln_bias")?.into_vec(),
                heads,
            };
            if heads == 0 || !d.is_multiple_of(heads) {
                return Err(format(format!("invalid head count {heads} for width {d}")));
            }
            FusionParams::CrossAttention(p)
        }
    };
    let head = CtcHead::from_parts(weights, bias.into_vec(), vocab)?;
    Ok(FusionModel { fusion, head })
}

/// Writes `<path>` (FUS1) and its JSON sidecar.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &FusionModel, d_ref: usize, d_delta: usize, sidecar: &Sidecar) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, d_ref, d_delta)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    json.push('\n');
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FusionModel, Sidecar)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.clone(),
        msg: e.to_string(),
    })?;
    let vocab = Vocab::new(sidecar.vocab.clone())?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode(&bytes, vocab, path)?;
    if model.kind().as_str() != sidecar.fusion {
        return Err(Error::Format {
            path: side,
            msg: format!("sidecar says {} but parameters are {}", sidecar.fusion, model.kind()),
        });
    }
    Ok((model, sidecar))
}
