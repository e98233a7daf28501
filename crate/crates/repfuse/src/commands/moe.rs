use std::path::PathBuf;

use repfuse_core::fusion::mean_gate_weight;
use repfuse_core::trainer::{evaluate, Executor};
use repfuse_core::{FusionKind, StreamKey};
use serde::{Deserialize, Serialize};

use super::{create_dir, required, resolve, write_json, write_run_record};
use crate::checkpoint::load_checkpoint;
use crate::dataset::load_samples;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifest::load_manifest;

pub const REPORT_NAME: &str = "moe.json";

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoeRun {
    pub checkpoint: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeReport {
    /// Mean gate weight on the fine-tuned reference stream over all frames.
    pub mean_w_ft: f64,
    pub wer: f64,
    pub cer: f64,
    pub utterances: usize,
    pub frames: usize,
}

pub fn execute(cfg: &MoeRun, exec: &Exec) -> Result<MoeReport> {
    let checkpoint = required(&cfg.checkpoint, "checkpoint")?;
    let test = required(&cfg.test, "test")?;
    let out = required(&cfg.out, "out")?;
    let (model, sidecar) = load_checkpoint(&checkpoint)?;
    if model.kind() != FusionKind::Moe {
        return Err(Error::Config(format!(
            "{} is a {} checkpoint; gate weights need a moe checkpoint",
            checkpoint.display(),
            model.kind()
        )));
    }
    let key = |s: &str| -> Result<StreamKey> {
        s.parse().map_err(|e| Error::Format {
            path: checkpoint.clone(),
            msg: format!("stream {s:?}: {e}"),
        })
    };
    let ref_key = key(&sidecar.reference_stream)?;
    let delta_key = sidecar.delta_stream.as_deref().map(key).transpose()?;
    let manifest = load_manifest(&test)?;
    let samples = load_samples(&manifest, &ref_key, delta_key.as_ref(), &model.head.vocab, exec)?;
    let gates = exec
        .map_indexed(samples.len(), |i| model.gates(&samples[i].reference))
        .into_iter()
        .map(|g| g.map(|g| g.expect("moe model has gates")))
        .collect::<repfuse_core::Result<Vec<_>>>()?;
    let eval = evaluate(&model, &samples, exec)?;
    let report = MoeReport {
        mean_w_ft: mean_gate_weight(&gates)?,
        wer: eval.wer.wer,
        cer: eval.cer,
        utterances: samples.len(),
        frames: gates.iter().map(|g| g.rows()).sum(),
    };
    create_dir(&out)?;
    write_json(&out.join(REPORT_NAME), &report)?;
    write_run_record(&out, "moe", cfg)?;
    Ok(report)
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: MoeRun = resolve(args.config.as_deref(), args)?;
    let r = execute(&cfg, &Exec::from_env()?)?;
    println!("mean w_ft {:.4}  WER {:.4}  CER {:.4}", r.mean_w_ft, r.wer, r.cer);
    Ok(())
}
