use std::path::PathBuf;

use repfuse_core::optim::OptimizerKind;
use repfuse_core::trainer::{train, TrainConfig};
use repfuse_core::{FusionKind, StreamKey};
use serde::{Deserialize, Serialize};

use super::{create_dir, numerical_guard, required, resolve, write_json, write_run_record};
use crate::checkpoint::{save_checkpoint, EpochRecord, Sidecar};
use crate::dataset::{load_samples, widths};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifest::{build_vocab, load_manifest};

pub const CHECKPOINT_NAME: &str = "model.fus";
pub const HISTORY_NAME: &str = "history.json";

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    /// Reference stream as `model/layer/variant`, e.g. `ref/2/finetuned`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_stream: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_stream: Option<String>,
    /// ref, concat, weighted, xattn or moe.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// adam or sgd.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub ref_stream: Option<String>,
    pub delta_stream: Option<String>,
    pub fusion: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: String,
    pub heads: usize,
    pub out: Option<PathBuf>,
}

impl Default for TrainRun {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            train: None,
            dev: None,
            ref_stream: None,
            delta_stream: None,
            fusion: t.fusion.as_str().into(),
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            optimizer: t.optimizer.name().into(),
            heads: t.heads,
            out: None,
        }
    }
}

impl TrainRun {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            fusion: self.fusion.parse()?,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            optimizer: self.optimizer.parse::<OptimizerKind>()?,
            heads: self.heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stream(value: &Option<String>, field: &str) -> Result<StreamKey> {
    required(value, field)?
        .parse()
        .map_err(|e| Error::Config(format!("{field}: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub fusion: String,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Trains and writes the checkpoint, sidecar, history and run record.
pub fn execute(cfg: &TrainRun, exec: &Exec) -> Result<History> {
    let tc = cfg.train_config()?;
    let out = required(&cfg.out, "out")?;
    let ref_key = stream(&cfg.ref_stream, "ref_stream")?;
    let delta_key = if tc.fusion.uses_delta() {
        Some(stream(&cfg.delta_stream, "delta_stream").map_err(|_| {
            Error::Config(format!("delta_stream is required for {} fusion", tc.fusion))
        })?)
    } else {
        if cfg.delta_stream.is_some() {
            log::warn!("delta_stream is ignored for ref fusion");
        }
        None
    };
    let train_m = load_manifest(required(&cfg.train, "train")?)?;
    let dev_m = load_manifest(required(&cfg.dev, "dev")?)?;
    let all: Vec<_> = train_m.records.iter().chain(&dev_m.records).cloned().collect();
    let vocab = build_vocab(&all)?;

    let train_set = load_samples(&train_m, &ref_key, delta_key.as_ref(), &vocab, exec)?;
    let dev_set = load_samples(&dev_m, &ref_key, delta_key.as_ref(), &vocab, exec)?;
    let (d_ref, d_delta) = widths(&train_set)?;
    if widths(&dev_set)? != (d_ref, d_delta) {
        return Err(Error::Pairing("train and dev feature widths differ".into()));
    }
    if tc.fusion == FusionKind::Reference {
        log::info!("training ref head on {ref_key}, d = {d_ref}");
    } else {
        log::info!("training {} fusion of {ref_key} (d = {d_ref}) and {} (d = {d_delta})", tc.fusion, delta_key.as_ref().expect("set"));
    }

    let trained = train(&train_set, &dev_set, vocab.clone(), &tc, exec)?;
    for s in &trained.history {
        log::info!("epoch {:>3}  train {:.4}  dev {:.4}", s.epoch, s.train_loss, s.dev_loss);
    }
    let best = &trained.history[trained.best_epoch];
    numerical_guard(best.dev_loss, "best dev loss")?;

    create_dir(&out)?;
    let history = History {
        fusion: tc.fusion.as_str().into(),
        best_epoch: trained.best_epoch,
        epochs: trained.history.iter().map(EpochRecord::from).collect(),
    };
    let sidecar = Sidecar {
        format: "FUS1".into(),
        fusion: tc.fusion.as_str().into(),
        vocab: vocab.symbols().to_vec(),
        reference_stream: ref_key.to_string(),
        delta_stream: delta_key.map(|k| k.to_string()),
        seed: tc.seed,
        best_epoch: trained.best_epoch,
        history: history.epochs.clone(),
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    save_checkpoint(out.join(CHECKPOINT_NAME), &trained.model, d_ref, d_delta, &sidecar)?;
    write_json(&out.join(HISTORY_NAME), &history)?;
    write_run_record(&out, "train", cfg)?;
    Ok(history)
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: TrainRun = resolve(args.config.as_deref(), args)?;
    let exec = Exec::from_env()?;
    let h = execute(&cfg, &exec)?;
    let best = &h.epochs[h.best_epoch];
    println!(
        "best epoch {} of {}: dev loss {:.4} (epoch 0: {:.4})",
        h.best_epoch,
        h.epochs.len() - 1,
        best.dev_loss,
        h.epochs[0].dev_loss
    );
    Ok(())
}
