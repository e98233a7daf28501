use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use repfuse_core::similarity::{layer_similarity, LayerSimilarity, DEFAULT_MAX_FRAMES, DEFAULT_REG_EPS};
use repfuse_core::trainer::Executor;
use repfuse_core::{Matrix, StreamKey, Variant};
use serde::{Deserialize, Serialize};

use super::{create_dir, required, resolve, write_json, write_run_record};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifest::{load_manifest, Manifest};

pub const REPORT_NAME: &str = "similarity.json";
pub const CSV_NAME: &str = "similarity.csv";

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_a: Option<PathBuf>,
    /// Defaults to `--manifest-a`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_b: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_a: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant_a: Option<String>,
    /// Defaults to `--model-a`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_b: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant_b: Option<String>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaRun {
    pub manifest_a: Option<PathBuf>,
    pub manifest_b: Option<PathBuf>,
    pub model_a: Option<String>,
    pub variant_a: String,
    pub model_b: Option<String>,
    pub variant_b: String,
    pub layers: Vec<usize>,
    pub max_frames: usize,
    pub seed: u64,
    pub reg_eps: f64,
    pub out: Option<PathBuf>,
}

impl Default for CcaRun {
    fn default() -> Self {
        Self {
            manifest_a: None,
            manifest_b: None,
            model_a: None,
            variant_a: Variant::Pretrained.as_str().into(),
            model_b: None,
            variant_b: Variant::Finetuned.as_str().into(),
            layers: Vec::new(),
            max_frames: DEFAULT_MAX_FRAMES,
            seed: 0,
            reg_eps: DEFAULT_REG_EPS,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub layer: usize,
    pub pwcca: f64,
    pub mean_corr: f64,
    pub n_frames: usize,
    pub rank_warning: bool,
    pub canonical_corrs: Vec<f64>,
}

impl From<LayerSimilarity> for LayerEntry {
    fn from(s: LayerSimilarity) -> Self {
        let mean_corr = s.canonical_corrs.iter().sum::<f64>() / s.canonical_corrs.len().max(1) as f64;
        Self {
            layer: s.layer,
            pwcca: s.pwcca,
            mean_corr,
            n_frames: s.n_frames,
            rank_warning: s.rank_warning,
            canonical_corrs: s.canonical_corrs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model_a: String,
    pub model_b: String,
    pub seed: u64,
    pub max_frames: usize,
    pub per_layer: Vec<LayerEntry>,
}

// All frames of one layer, utterances in `order`.
fn stack(manifest: &Manifest, order: &[&str], key: &StreamKey) -> Result<Vec<Matrix>> {
    order
        .iter()
        .map(|id| {
            let rec = manifest.get(id).expect("pairing checked");
            Ok(manifest.read_stream(rec, key)?.frames)
        })
        .collect()
}

pub fn execute(cfg: &CcaRun, exec: &Exec) -> Result<Report> {
    let path_a = required(&cfg.manifest_a, "manifest_a")?;
    let path_b = cfg.manifest_b.clone().unwrap_or_else(|| path_a.clone());
    let model_a = required(&cfg.model_a, "model_a")?;
    let model_b = cfg.model_b.clone().unwrap_or_else(|| model_a.clone());
    let variant_a: Variant = cfg.variant_a.parse()?;
    let variant_b: Variant = cfg.variant_b.parse()?;
    let out = required(&cfg.out, "out")?;
    if cfg.layers.is_empty() {
        return Err(Error::Config("layers must name at least one layer".into()));
    }
    if cfg.max_frames == 0 {
        return Err(Error::Config("max_frames must be at least 1".into()));
    }

    let a = load_manifest(&path_a)?;
    let b = load_manifest(&path_b)?;
    let order: Vec<&str> = a.records.iter().map(|r| r.id.as_str()).collect();
    if let Some(id) = order.iter().find(|id| b.get(id).is_none()) {
        return Err(Error::Pairing(format!("utterance {id:?} is missing from {}", path_b.display())));
    }
    if let Some(r) = b.records.iter().find(|r| a.get(&r.id).is_none()) {
        return Err(Error::Pairing(format!("utterance {:?} is missing from {}", r.id, path_a.display())));
    }

    let results = exec.map_indexed(cfg.layers.len(), |i| -> Result<LayerEntry> {
        let layer = cfg.layers[i];
        let xs = stack(&a, &order, &StreamKey::new(model_a.as_str(), layer, variant_a))?;
        let ys = stack(&b, &order, &StreamKey::new(model_b.as_str(), layer, variant_b))?;
        for ((x, y), id) in xs.iter().zip(&ys).zip(&order) {
            if x.rows() != y.rows() {
                return Err(Error::Pairing(format!(
                    "utterance {id:?}, layer {layer}: {} vs {} frames",
                    x.rows(),
                    y.rows()
                )));
            }
        }
        let x = Matrix::vstack(&xs.iter().collect::<Vec<_>>())?;
        let y = Matrix::vstack(&ys.iter().collect::<Vec<_>>())?;
        Ok(layer_similarity(layer, &x, &y, cfg.max_frames, cfg.seed, cfg.reg_eps)?.into())
    });
    let per_layer = results.into_iter().collect::<Result<Vec<_>>>()?;
    for l in per_layer.iter().filter(|l| l.rank_warning) {
        log::warn!("layer {}: covariance is rank deficient beyond regularization", l.layer);
    }
    let report = Report {
        model_a: format!("{model_a}/{variant_a}"),
        model_b: format!("{model_b}/{variant_b}"),
        seed: cfg.seed,
        max_frames: cfg.max_frames,
        per_layer,
    };

    create_dir(&out)?;
    write_json(&out.join(REPORT_NAME), &report)?;
    let mut csv = String::from("layer,pwcca\n");
    for l in &report.per_layer {
        writeln!(csv, "{},{}", l.layer, l.pwcca).expect("string write");
    }
    let csv_path = out.join(CSV_NAME);
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    write_run_record(&out, "cca", cfg)?;
    Ok(report)
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: CcaRun = resolve(args.config.as_deref(), args)?;
    let report = execute(&cfg, &Exec::from_env()?)?;
    for l in &report.per_layer {
        println!("layer {:>3}  pwcca {:.4}  frames {}", l.layer, l.pwcca, l.n_frames);
    }
    Ok(())
}
