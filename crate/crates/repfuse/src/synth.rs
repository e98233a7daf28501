//! Synthetic corpus with a known answer.
//!
//! Transcripts use eight symbols (`a`–`g` and space). Each character emits
//! 2–4 frames. Two pseudo-models, `ref` and `aux`, produce fine-tuned frames
//! `class mean + σ·noise`, where the confusable pairs `(a, b)`, `(c, d)` and
//! `(e, f)` share one class mean, so neither fine-tuned stream can tell the
//! pair members apart. Pre-trained frames are the fine-tuned frames minus a
//! per-character shift that grows with depth and equals `δ(c)` at the last
//! layer, so the last-layer delta stream separates every pair exactly.
//!
//! Lower layers see the same frames through a fixed random projection. All
//! values sit on a 2⁻¹² grid, which makes `ft − pt` reproduce the shift
//! bit for bit in `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use repfuse_core::{Matrix, StreamKey, Variant};
use serde::{Deserialize, Serialize};

use crate::emb::write_frames;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, UtteranceRecord};

pub const ALPHABET: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', ' '];
pub const CONFUSABLE: [(char, char); 3] = [('a', 'b'), ('c', 'd'), ('e', 'f')];
pub const MODELS: [&str; 2] = ["ref", "aux"];
pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
/// Seconds per frame.
pub const FRAME_STRIDE: f64 = 0.02;

const GRID: f64 = 4096.0;
const LIMIT: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Utterances in the train, dev and test splits.
    pub utts: [usize; 3],
    pub d: usize,
    pub sigma: f64,
    /// Layers `0..layers` are written; the last one carries `δ(c)`.
    pub layers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            utts: [500, 100, 100],
            d: 32,
            sigma: 0.5,
            layers: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.utts.contains(&0) {
            return Err(Error::Config("utts needs at least one utterance per split".into()));
        }
        Ok(())
    }

    pub fn last_layer(&self) -> usize {
        self.layers - 1
    }
}

fn quantize(x: f64) -> f32 {
    ((x * GRID).round() / GRID).clamp(-LIMIT, LIMIT) as f32
}

fn class_of(c: char) -> usize {
    CONFUSABLE
        .iter()
        .position(|&(x, y)| c == x || c == y)
        .unwrap_or_else(|| match c {
            'g' => CONFUSABLE.len(),
            _ => CONFUSABLE.len() + 1,
        })
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

struct ModelWorld {
    means: Vec<Vec<f64>>,
    /// Per layer below the last, `d×d` row-major.
    projections: Vec<Vec<f64>>,
    deltas: BTreeMap<char, Vec<f32>>,
}

/// The fixed parameters of a synthetic corpus.
pub struct World {
    cfg: SynthConfig,
    models: Vec<ModelWorld>,
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub transcript: String,
    /// Character emitted at each frame.
    pub frame_chars: Vec<char>,
    pub streams: BTreeMap<StreamKey, Matrix>,
}

impl World {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let classes = class_of(' ') + 1;
        let models = MODELS
            .iter()
            .map(|_| ModelWorld {
                means: (0..classes).map(|_| normal_vec(&mut rng, d)).collect(),
                projections: (0..cfg.last_layer())
                    .map(|_| normal_vec(&mut rng, d * d).into_iter().map(|v| v / (d as f64).sqrt()).collect())
                    .collect(),
                deltas: ALPHABET
                    .iter()
                    .map(|&c| (c, normal_vec(&mut rng, d).into_iter().map(quantize).collect()))
                    .collect(),
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), models })
    }

    fn model(&self, name: &str) -> &ModelWorld {
        let i = MODELS.iter().position(|&m| m == name).expect("known pseudo-model");
        &self.models[i]
    }

    /// Fine-tuned class mean of `c` at the last layer.
    pub fn class_mean(&self, model: &str, c: char) -> Vec<f32> {
        self.model(model).means[class_of(c)].iter().map(|&v| quantize(v)).collect()
    }

    /// `δ(c)`: the last-layer fine-tuned minus pre-trained shift.
    pub fn delta(&self, model: &str, c: char) -> &[f32] {
        &self.model(model).deltas[&c]
    }

    // Shift at `layer`: δ(c) scaled by layer / last, on the grid.
    fn shift(&self, model: &str, layer: usize, c: char) -> Vec<f32> {
        let last = self.cfg.last_layer();
        let delta = self.delta(model, c);
        if layer == last {
            return delta.to_vec();
        }
        let s = layer as f64 / last as f64;
        delta.iter().map(|&v| quantize(s * f64::from(v))).collect()
    }

    fn transcript(rng: &mut ChaCha8Rng) -> String {
        let letters = &ALPHABET[..7];
        let words = rng.random_range(2..=4);
        let mut out = String::new();
        for w in 0..words {
            if w > 0 {
                out.push(' ');
            }
            let mut prev = None;
            for _ in 0..rng.random_range(1..=4) {
                let c = loop {
                    let c = letters[rng.random_range(0..letters.len())];
                    if Some(c) != prev {
                        break c;
                    }
                };
                out.push(c);
                prev = Some(c);
            }
        }
        out
    }

    pub fn utterance(&self, id: impl Into<String>, rng: &mut ChaCha8Rng) -> SynthUtterance {
        let d = self.cfg.d;
        let transcript = Self::transcript(rng);
        let mut frame_chars = Vec::new();
        for c in transcript.chars() {
            for _ in 0..rng.random_range(2..=4) {
                frame_chars.push(c);
            }
        }
        let t_len = frame_chars.len();
        let mut streams = BTreeMap::new();
        for name in MODELS {
            let world = self.model(name);
            let hidden: Vec<Vec<f64>> = frame_chars
                .iter()
                .map(|&c| {
                    let mean = &world.means[class_of(c)];
                    mean.iter().map(|m| m + self.cfg.sigma * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            for layer in 0..self.cfg.layers {
                let ft: Vec<f32> = match world.projections.get(layer) {
                    Some(p) => hidden
                        .iter()
                        .flat_map(|h| (0..d).map(move |j| quantize((0..d).map(|k| h[k] * p[k * d + j]).sum())))
                        .collect(),
                    None => hidden.iter().flat_map(|h| h.iter().map(|&v| quantize(v))).collect(),
                };
                let mut pt = ft.clone();
                for (t, &c) in frame_chars.iter().enumerate() {
                    for (x, s) in pt[t * d..(t + 1) * d].iter_mut().zip(self.shift(name, layer, c)) {
                        *x -= s;
                    }
                }
                let key = StreamKey::new(name, layer, Variant::Finetuned);
                streams.insert(key.with_variant(Variant::Pretrained), Matrix::new(t_len, d, pt).expect("finite"));
                streams.insert(key, Matrix::new(t_len, d, ft).expect("finite"));
            }
        }
        SynthUtterance {
            id: id.into(),
            transcript,
            frame_chars,
            streams,
        }
    }

    /// The utterances of one split, in order.
    pub fn split(&self, split: usize) -> Vec<SynthUtterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(split as u64 + 1);
        (0..self.cfg.utts[split])
            .map(|i| self.utterance(format!("{}-{i:04}", SPLITS[split]), &mut rng))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub name: String,
    pub manifest: PathBuf,
    pub utterances: usize,
    pub frames: usize,
}

/// Writes `emb/*.emb` and `train.jsonl`, `dev.jsonl`, `test.jsonl` under
/// `out`.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<Vec<SplitSummary>> {
    let world = World::new(cfg)?;
    let emb_dir = out.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let mut summary = Vec::new();
    for (s, name) in SPLITS.iter().enumerate() {
        let mut records = Vec::new();
        let mut frames = 0;
        for utt in world.split(s) {
            let mut rec = UtteranceRecord::new(utt.id.clone(), &utt.transcript);
            rec.duration_s = Some(utt.frame_chars.len() as f64 * FRAME_STRIDE);
            frames += utt.frame_chars.len();
            for (key, m) in &utt.streams {
                let rel = PathBuf::from("emb").join(format!("{}.{}.{}.{}.emb", utt.id, key.model, key.layer, key.variant));
                write_frames(m, out.join(&rel))?;
                rec.paths.insert(key.clone(), rel);
            }
            records.push(rec);
        }
        let path = out.join(format!("{name}.jsonl"));
        Manifest::new(out, records).save(&path)?;
        summary.push(SplitSummary {
            name: name.to_string(),
            manifest: path,
            utterances: cfg.utts[s],
            frames,
        });
    }
    Ok(summary)
}
