use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Pretrained,
    Finetuned,
    Delta,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Pretrained => "pretrained",
            Variant::Finetuned => "finetuned",
            Variant::Delta => "delta",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" | "pt" => Ok(Variant::Pretrained),
            "finetuned" | "ft" => Ok(Variant::Finetuned),
            "delta" => Ok(Variant::Delta),
            other => Err(Error::Config(alloc::format!("unknown variant {other:?}"))),
        }
    }
}

/// Identifies one dump of one utterance: `model/layer/variant`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub model: String,
    pub layer: usize,
    pub variant: Variant,
}

impl StreamKey {
    pub fn new(model: impl Into<String>, layer: usize, variant: Variant) -> Self {
        Self {
            model: model.into(),
            layer,
            variant,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn with_layer(&self, layer: usize) -> Self {
        Self {
            layer,
            ..self.clone()
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model, self.layer, self.variant)
    }
}

impl FromStr for StreamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.rsplitn(3, '/');
        let (variant, layer, model) = match (parts.next(), parts.next(), parts.next()) {
            (Some(v), Some(l), Some(m)) if !m.is_empty() => (v, l, m),
            _ => {
                return Err(Error::Config(alloc::format!(
                    "stream key {s:?} is not of the form model/layer/variant"
                )))
            }
        };
        let layer = layer
            .parse()
            .map_err(|_| Error::Config(alloc::format!("bad layer index in stream key {s:?}")))?;
        Ok(StreamKey {
            model: model.to_string(),
            layer,
            variant: variant.parse()?,
        })
    }
}

/// One utterance's frame matrix from one model, layer and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub utterance_id: String,
    pub key: StreamKey,
    pub frames: Matrix,
}

impl EmbeddingSequence {
    pub fn new(utterance_id: impl Into<String>, key: StreamKey, frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Domain(alloc::format!(
                "embedding sequence must have T >= 1 and d >= 1, got {}x{}",
                frames.rows(),
                frames.cols()
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            key,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Frame-wise difference between a fine-tuned sequence and its pre-trained
/// counterpart.
pub fn compute_delta(ft: &EmbeddingSequence, pt: &EmbeddingSequence) -> Result<EmbeddingSequence> {
    let describe = |s: &EmbeddingSequence| {
        alloc::format!("{}:{} ({}x{})", s.utterance_id, s.key, s.num_frames(), s.dim())
    };
    let same_source = ft.utterance_id == pt.utterance_id
        && ft.key.model == pt.key.model
        && ft.key.layer == pt.key.layer;
    let right_variants = ft.key.variant == Variant::Finetuned && pt.key.variant == Variant::Pretrained;
    if !same_source || !right_variants || ft.frames.shape() != pt.frames.shape() {
        return Err(Error::Pairing(alloc::format!(
            "cannot subtract {} from {}",
            describe(pt),
            describe(ft)
        )));
    }
    Ok(EmbeddingSequence {
        utterance_id: ft.utterance_id.clone(),
        key: ft.key.with_variant(Variant::Delta),
        frames: ft.frames.sub(&pt.frames)?,
    })
}
