use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use repfuse_core::metrics::{paired_bootstrap, ScoredPair, DEFAULT_RESAMPLES};
use repfuse_core::trainer::{evaluate, Evaluation};
use repfuse_core::StreamKey;
use serde::{Deserialize, Serialize};

use super::{create_dir, required, resolve, write_run_record};
use crate::checkpoint::{load_checkpoint, Sidecar};
use crate::dataset::load_samples;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifest::load_manifest;

pub const REPORT_NAME: &str = "report.jsonl";

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// A previous `report.jsonl`, or any JSONL with `id` and `hypothesis`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_hyps: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub checkpoint: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub baseline_hyps: Option<PathBuf>,
    pub resamples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            test: None,
            baseline_hyps: None,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLine {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub wer: f64,
    pub edits: usize,
    pub ref_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub fusion: String,
    pub utterances: usize,
    pub wer: f64,
    pub cer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    /// Fraction of bootstrap resamples where this system is not better than
    /// the baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: Summary,
}

#[derive(Deserialize)]
struct BaselineLine {
    id: String,
    hypothesis: String,
}

/// Loads a checkpoint, its streams from `test`, and decodes every record.
pub fn evaluate_checkpoint(checkpoint: &Path, test: &Path, exec: &Exec) -> Result<(Evaluation, Sidecar)> {
    let (model, sidecar) = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(test)?;
    let parse = |s: &str| -> Result<StreamKey> {
        s.parse().map_err(|e| Error::Format {
            path: checkpoint.to_path_buf(),
            msg: format!("stream {s:?}: {e}"),
        })
    };
    let ref_key = parse(&sidecar.reference_stream)?;
    let delta_key = sidecar.delta_stream.as_deref().map(parse).transpose()?;
    let samples = load_samples(&manifest, &ref_key, delta_key.as_ref(), &model.head.vocab, exec)?;
    Ok((evaluate(&model, &samples, exec)?, sidecar))
}

/// Reads baseline hypotheses and scores them against this run's references.
pub fn baseline_pairs(path: &Path, eval: &Evaluation) -> Result<Vec<ScoredPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut hyps = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || serde_json::from_str::<SummaryLine>(line).is_ok() {
            continue;
        }
        let b: BaselineLine = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if hyps.insert(b.id.clone(), b.hypothesis).is_some() {
            return Err(Error::Pairing(format!("baseline repeats utterance {:?}", b.id)));
        }
    }
    let ids: BTreeSet<&str> = eval.hypotheses.iter().map(|h| h.id.as_str()).collect();
    if let Some(extra) = hyps.keys().find(|id| !ids.contains(id.as_str())) {
        return Err(Error::Pairing(format!("baseline utterance {extra:?} is not in the test set")));
    }
    eval.hypotheses
        .iter()
        .map(|h| {
            hyps.get(&h.id)
                .map(|b| ScoredPair::new(h.id.clone(), &h.reference, b))
                .ok_or_else(|| Error::Pairing(format!("baseline has no hypothesis for utterance {:?}", h.id)))
        })
        .collect()
}

pub fn summarize(eval: &Evaluation, fusion: &str, p_value: Option<f64>) -> Summary {
    Summary {
        fusion: fusion.into(),
        utterances: eval.hypotheses.len(),
        wer: eval.wer.wer,
        cer: eval.cer,
        substitutions: eval.wer.edits.sub,
        deletions: eval.wer.edits.del,
        insertions: eval.wer.edits.ins,
        ref_words: eval.wer.ref_words,
        p_value,
    }
}

pub fn write_report(path: &Path, eval: &Evaluation, summary: &Summary) -> Result<()> {
    let mut out = String::new();
    for (h, p) in eval.hypotheses.iter().zip(&eval.wer.pairs) {
        let line = UtteranceLine {
            id: h.id.clone(),
            reference: h.reference.clone(),
            hypothesis: h.hypothesis.clone(),
            wer: p.wer(),
            edits: p.edits.total(),
            ref_words: p.ref_words.len(),
        };
        out.push_str(&serde_json::to_string(&line).expect("line serializes"));
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&SummaryLine { summary: summary.clone() }).expect("summary serializes"));
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn execute(cfg: &EvalRun, exec: &Exec) -> Result<Summary> {
    let checkpoint = required(&cfg.checkpoint, "checkpoint")?;
    let test = required(&cfg.test, "test")?;
    let out = required(&cfg.out, "out")?;
    let (eval, sidecar) = evaluate_checkpoint(&checkpoint, &test, exec)?;
    let p_value = match &cfg.baseline_hyps {
        Some(path) => {
            let base = baseline_pairs(path, &eval)?;
            Some(paired_bootstrap(&base, &eval.wer.pairs, cfg.resamples, cfg.seed)?)
        }
        None => None,
    };
    let summary = summarize(&eval, &sidecar.fusion, p_value);
    create_dir(&out)?;
    write_report(&out.join(REPORT_NAME), &eval, &summary)?;
    write_run_record(&out, "eval", cfg)?;
    Ok(summary)
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: EvalRun = resolve(args.config.as_deref(), args)?;
    let s = execute(&cfg, &Exec::from_env()?)?;
    match s.p_value {
        Some(p) => println!("WER {:.4}  CER {:.4}  p {:.4}", s.wer, s.cer, p),
        None => println!("WER {:.4}  CER {:.4}", s.wer, s.cer),
    }
    Ok(())
}
