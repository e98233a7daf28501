//! Joint training of a fusion operator and a linear CTC head over frozen
//! embedding streams, plus corpus evaluation of a trained model.
//!
//! Each sample is evaluated at its own frame count, so no padding or masking
//! is involved. Per-sample gradients are produced by an [`Executor`] (which
//! may run them concurrently) and always reduced in batch index order, which
//! keeps training bit-reproducible for a given seed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, ctc_loss_and_grad, greedy_decode};
use crate::error::{Error, Result};
use crate::fusion::{moe_gate, FusionKind, FusionParams, DEFAULT_HEADS};
use crate::head::CtcHead;
use crate::metrics::{cer, wer_with_ids, WerReport};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::Matrix;
use crate::text::{LabelSeq, Vocab};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub fusion: FusionKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Attention heads; only used by cross-attention fusion.
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fusion: FusionKind::Concat,
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            optimizer: OptimizerKind::ADAM,
            heads: DEFAULT_HEADS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(alloc::format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience,
                self.max_epochs
            )));
        }
        if self.fusion == FusionKind::CrossAttention && self.heads == 0 {
            return Err(Error::Config("heads must be at least 1".into()));
        }
        Ok(())
    }
}

/// One utterance's frozen inputs and its target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub reference: Matrix,
    /// Absent only when training a reference-only model.
    pub delta: Option<Matrix>,
    pub transcript: String,
    pub target: LabelSeq,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        reference: Matrix,
        delta: Option<Matrix>,
        transcript: impl Into<String>,
        vocab: &Vocab,
    ) -> Result<Self> {
        let id = id.into();
        let transcript = transcript.into();
        if let Some(d) = &delta {
            if d.rows() != reference.rows() {
                return Err(Error::Pairing(alloc::format!(
                    "utterance {id}: reference has {} frames, delta has {}",
                    reference.rows(),
                    d.rows()
                )));
            }
        }
        let target = vocab.encode(&transcript)?;
        Ok(Self {
            id,
            reference,
            delta,
            transcript,
            target,
        })
    }

    fn delta_for(&self, kind: FusionKind) -> Result<&Matrix> {
        match (&self.delta, kind) {
            (Some(d), _) => Ok(d),
            (None, FusionKind::Reference) => Ok(&self.reference),
            (None, _) => Err(Error::Pairing(alloc::format!(
                "utterance {} has no delta stream for {kind} fusion",
                self.id
            ))),
        }
    }
}

/// Runs independent per-sample work, returning results in index order.
pub trait Executor: Sync {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// A fusion operator followed by a linear CTC head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub fusion: FusionParams,
    pub head: CtcHead,
}

impl FusionModel {
    pub fn init(cfg: &TrainConfig, d_ref: usize, d_delta: usize, vocab: Vocab) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fusion = FusionParams::init(cfg.fusion, d_ref, d_delta, cfg.heads, &mut rng)?;
        let head = CtcHead::zeros(cfg.fusion.output_dim(d_ref, d_delta), vocab);
        Ok(Self { fusion, head })
    }

    pub fn kind(&self) -> FusionKind {
        self.fusion.kind()
    }

    pub fn log_probs(&self, reference: &Matrix, delta: &Matrix) -> Result<Matrix> {
        let (z, _) = self.fusion.forward(reference, delta)?;
        self.head.log_probs(&z)
    }

    pub fn sample_log_probs(&self, sample: &Sample) -> Result<Matrix> {
        self.log_probs(&sample.reference, sample.delta_for(self.kind())?)
    }

    pub fn transcribe(&self, sample: &Sample) -> Result<String> {
        Ok(greedy_decode(&self.sample_log_probs(sample)?, &self.head.vocab))
    }

    /// Frame-wise gate weights; `None` unless this is a MoE model.
    pub fn gates(&self, reference: &Matrix) -> Result<Option<Matrix>> {
        match &self.fusion {
            FusionParams::Moe { gate } => moe_gate(reference, gate).map(Some),
            _ => Ok(None),
        }
    }

    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        ctc_loss(&self.sample_log_probs(sample)?, &sample.target)
    }

    /// CTC loss of one sample and the gradient of every parameter tensor, in
    /// [`FusionModel::params_mut`] order.
    pub fn loss_and_grads(&self, sample: &Sample) -> Result<(f64, Vec<Vec<f32>>)> {
        let delta = sample.delta_for(self.kind())?;
        let (z, cache) = self.fusion.forward(&sample.reference, delta)?;
        let log_probs = self.head.log_probs(&z)?;
        let (loss, d_logits) = ctc_loss_and_grad(&log_probs, &sample.target)?;
        let (d_w, d_b, d_z) = self.head.backward(&z, &d_logits)?;
        let mut grads = Vec::new();
        if self.fusion.num_params() > 0 {
            let fg = self.fusion.backward(&cache, &d_z)?;
            grads.extend(fg.params.tensors().into_iter().map(<[f32]>::to_vec));
        }
        grads.push(d_w.into_vec());
        grads.push(d_b);
        Ok((loss, grads))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut p = self.fusion.tensors_mut();
        p.push(self.head.weights.as_mut_slice());
        p.push(&mut self.head.bias);
        p
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.fusion.tensors().iter().map(|t| t.len()).collect();
        s.push(self.head.weights.as_slice().len());
        s.push(self.head.bias.len());
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Training samples skipped this epoch because their target could not
    /// be aligned in their frame count.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedFusionModel {
    pub model: FusionModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Mean per-sample CTC loss over the feasible samples, and how many were
/// infeasible.
pub fn mean_loss<E: Executor>(model: &FusionModel, samples: &[Sample], exec: &E) -> Result<(f64, usize)> {
    let losses = exec.map_indexed(samples.len(), |i| model.sample_loss(&samples[i]));
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (sample, loss) in samples.iter().zip(losses) {
        match loss {
            Ok(l) => {
                total += l;
                used += 1;
            }
            Err(Error::Infeasible { .. }) => {
                log::warn!("skipping {}: target cannot be aligned", sample.id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Training("every sample has an infeasible target".into()));
    }
    Ok((total / used as f64, skipped))
}

/// Trains with seeded shuffling and early stopping on dev loss; returns the
/// parameters from the epoch with the lowest dev loss.
pub fn train<E: Executor>(
    train_set: &[Sample],
    dev_set: &[Sample],
    vocab: Vocab,
    cfg: &TrainConfig,
    exec: &E,
) -> Result<TrainedFusionModel> {
    cfg.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::Training("empty training set".into()))?;
    if dev_set.is_empty() {
        return Err(Error::Training("empty dev set".into()));
    }
    let d_ref = first.reference.cols();
    let d_delta = match (&first.delta, cfg.fusion) {
        (_, FusionKind::Reference) => d_ref,
        (Some(d), _) => d.cols(),
        (None, kind) => first.delta_for(kind)?.cols(),
    };
    let mut model = FusionModel::init(cfg, d_ref, d_delta, vocab)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.param_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);

    let (train0, skipped0) = mean_loss(&model, train_set, exec)?;
    let (dev0, _) = mean_loss(&model, dev_set, exec)?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: train0,
        dev_loss: dev0,
        skipped: skipped0,
    }];
    let mut best = (dev0, model.clone(), 0usize);
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results = exec.map_indexed(batch.len(), |i| model.loss_and_grads(&train_set[batch[i]]));
            let mut sum: Option<Vec<Vec<f64>>> = None;
            let mut count = 0usize;
            for (&idx, r) in batch.iter().zip(results) {
                match r {
                    Ok((loss, grads)) => {
                        loss_sum += loss;
                        count += 1;
                        let acc = sum.get_or_insert_with(|| {
                            grads.iter().map(|g| vec![0.0f64; g.len()]).collect()
                        });
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, &y) in a.iter_mut().zip(g) {
                                *x += f64::from(y);
                            }
                        }
                    }
                    Err(Error::Infeasible { .. }) => {
                        log::warn!("skipping {}: target cannot be aligned", train_set[idx].id);
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            let Some(mut grads) = sum else { continue };
            let scale = 1.0 / count as f64;
            for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
                *g *= scale;
            }
            used += count;
            opt.step(&mut model.params_mut(), &grads);
        }
        if used == 0 {
            return Err(Error::Training("every training sample has an infeasible target".into()));
        }
        let (dev_loss, _) = mean_loss(&model, dev_set, exec)?;
        if !dev_loss.is_finite() {
            return Err(Error::Training(alloc::format!("dev loss diverged at epoch {epoch}")));
        }
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / used as f64,
            dev_loss,
            skipped,
        });
        if dev_loss < best.0 {
            best = (dev_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedFusionModel {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub hypotheses: Vec<Hypothesis>,
    pub wer: WerReport,
    pub cer: f64,
}

/// Greedy transcription of every sample, scored against its transcript.
pub fn evaluate<E: Executor>(model: &FusionModel, samples: &[Sample], exec: &E) -> Result<Evaluation> {
    let hyps = exec.map_indexed(samples.len(), |i| model.transcribe(&samples[i]));
    let mut hypotheses = Vec::with_capacity(samples.len());
    for (s, h) in samples.iter().zip(hyps) {
        hypotheses.push(Hypothesis {
            id: s.id.clone(),
            reference: s.transcript.clone(),
            hypothesis: h?,
        });
    }
    score(hypotheses)
}

/// Scores a set of hypotheses (WER and CER).
pub fn score(hypotheses: Vec<Hypothesis>) -> Result<Evaluation> {
    let ids: Vec<&str> = hypotheses.iter().map(|h| h.id.as_str()).collect();
    let refs: Vec<&str> = hypotheses.iter().map(|h| h.reference.as_str()).collect();
    let hyps: Vec<&str> = hypotheses.iter().map(|h| h.hypothesis.as_str()).collect();
    let wer = wer_with_ids(&ids, &refs, &hyps)?;
    let cer = cer(&refs, &hyps)?;
    Ok(Evaluation { hypotheses, wer, cer })
}
