use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{create_dir, required, resolve, write_json, write_run_record};
use crate::error::Result;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Train, dev and test utterance counts, e.g. `500,100,100`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utts: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub utts: [usize; 3],
    pub d: usize,
    pub sigma: f64,
    pub layers: usize,
}

impl Default for SynthRun {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            out: None,
            seed: s.seed,
            utts: s.utts,
            d: s.d,
            sigma: s.sigma,
            layers: s.layers,
        }
    }
}

impl SynthRun {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            utts: self.utts,
            d: self.d,
            sigma: self.sigma,
            layers: self.layers,
        }
    }
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: SynthRun = resolve(args.config.as_deref(), args)?;
    let out = required(&cfg.out, "out")?;
    let synth = cfg.synth_config();
    synth.validate()?;
    create_dir(&out)?;
    let summary = generate(&synth, &out)?;
    for s in &summary {
        log::info!("{}: {} utterances, {} frames -> {}", s.name, s.utterances, s.frames, s.manifest.display());
    }
    write_json(&out.join("synth.json"), &summary)?;
    write_run_record(&out, "synth", &cfg)?;
    Ok(())
}
