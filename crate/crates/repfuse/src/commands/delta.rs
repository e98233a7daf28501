use std::collections::BTreeMap;
use std::path::PathBuf;

use repfuse_core::trainer::Executor;
use repfuse_core::{compute_delta, Variant};
use serde::{Deserialize, Serialize};

use super::{create_dir, required, resolve, write_run_record};
use crate::emb::write_emb;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifest::{load_manifest, relative_path, Manifest, UtteranceRecord};

pub const MANIFEST_NAME: &str = "delta.jsonl";

#[derive(Debug, Clone, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ft_manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pt_manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeltaRun {
    pub ft_manifest: Option<PathBuf>,
    pub pt_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Checks that both manifests hold the same ids and transcripts.
fn check_pairing(ft: &Manifest, pt: &Manifest) -> Result<()> {
    for r in &pt.records {
        let f = ft
            .get(&r.id)
            .ok_or_else(|| Error::Pairing(format!("utterance {:?} is in the pre-trained manifest but not the fine-tuned one", r.id)))?;
        if f.transcript != r.transcript {
            return Err(Error::Pairing(format!("utterance {:?} has different transcripts in the two manifests", r.id)));
        }
    }
    if let Some(r) = ft.records.iter().find(|r| pt.get(&r.id).is_none()) {
        return Err(Error::Pairing(format!(
            "utterance {:?} is in the fine-tuned manifest but not the pre-trained one",
            r.id
        )));
    }
    Ok(())
}

pub fn run(args: &Args) -> Result<()> {
    let cfg: DeltaRun = resolve(args.config.as_deref(), args)?;
    let ft_path = required(&cfg.ft_manifest, "ft_manifest")?;
    let pt_path = required(&cfg.pt_manifest, "pt_manifest")?;
    let out = required(&cfg.out, "out")?;
    let ft = load_manifest(&ft_path)?;
    let pt = load_manifest(&pt_path)?;
    check_pairing(&ft, &pt)?;
    let emb_dir = out.join("emb");
    create_dir(&emb_dir)?;
    let exec = Exec::from_env()?;

    let written = exec.map_indexed(ft.records.len(), |i| -> Result<UtteranceRecord> {
        let f = &ft.records[i];
        let p = pt.get(&f.id).expect("pairing checked");
        let mut rec = f.clone();
        rec.paths = BTreeMap::new();
        let mut deltas = 0;
        for (key, path) in &f.paths {
            rec.paths.insert(key.clone(), relative_path(&out, &ft.dir.join(path))?);
            if key.variant != Variant::Finetuned {
                continue;
            }
            let pt_key = key.with_variant(Variant::Pretrained);
            if !p.paths.contains_key(&pt_key) {
                continue;
            }
            let delta = compute_delta(&ft.read_stream(f, key)?, &pt.read_stream(p, &pt_key)?)?;
            let rel = PathBuf::from("emb").join(format!("{}.{}.{}.delta.emb", f.id, key.model, key.layer));
            write_emb(&delta, out.join(&rel))?;
            rec.paths.insert(delta.key.clone(), rel);
            deltas += 1;
        }
        for (key, path) in &p.paths {
            if key.variant == Variant::Pretrained {
                rec.paths.insert(key.clone(), relative_path(&out, &pt.dir.join(path))?);
            }
        }
        if deltas == 0 {
            return Err(Error::Pairing(format!(
                "utterance {:?} has no fine-tuned stream with a pre-trained counterpart",
                f.id
            )));
        }
        Ok(rec)
    });
    let records = written.into_iter().collect::<Result<Vec<_>>>()?;
    let n = records.len();
    Manifest::new(&out, records).save(out.join(MANIFEST_NAME))?;
    log::info!("wrote delta streams for {n} utterances");
    write_run_record(&out, "delta", &cfg)?;
    Ok(())
}
