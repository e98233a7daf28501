//! Line-delimited JSON manifests binding utterances to transcripts and
//! embedding dumps.
//!
//! ```json
//! {"id": "u1", "transcript": "a cab", "paths": {"ref/2/finetuned": "emb/u1.ref.2.finetuned.emb"}, "duration_s": 0.62}
//! ```
//! Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use repfuse_core::text::{build_vocab as vocab_from_transcripts, normalize_transcript};
use repfuse_core::{EmbeddingSequence, StreamKey, Vocab};
use serde::{Deserialize, Serialize};

use crate::emb::read_emb;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    transcript: String,
    paths: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    /// Normalized.
    pub transcript: String,
    /// Relative to the manifest directory.
    pub paths: BTreeMap<StreamKey, PathBuf>,
    pub duration_s: Option<f64>,
    /// Free-form producer metadata, carried through unchanged.
    pub meta: Option<serde_json::Value>,
}

impl UtteranceRecord {
    pub fn new(id: impl Into<String>, transcript: &str) -> Self {
        Self {
            id: id.into(),
            transcript: normalize_transcript(transcript),
            paths: BTreeMap::new(),
            duration_s: None,
            meta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that record paths are relative to.
    pub dir: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(err(line_no, format!("duplicate id {:?}", raw.id)));
        }
        let transcript = normalize_transcript(&raw.transcript);
        if transcript.is_empty() {
            return Err(err(line_no, format!("transcript of {:?} is empty after normalization", raw.id)));
        }
        let mut paths = BTreeMap::new();
        for (k, v) in raw.paths {
            let key: StreamKey = k.parse().map_err(|e: repfuse_core::Error| err(line_no, e.to_string()))?;
            paths.insert(key, PathBuf::from(v));
        }
        records.push(UtteranceRecord {
            id: raw.id,
            transcript,
            paths,
            duration_s: raw.duration_s,
            meta: raw.meta,
        });
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { dir, records })
}

impl Manifest {
    pub fn new(dir: impl Into<PathBuf>, records: Vec<UtteranceRecord>) -> Self {
        Self {
            dir: dir.into(),
            records,
        }
    }

    /// Writes the records, one JSON object per line. Record paths are
    /// written as stored, so they must already be relative to the
    /// directory of `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for r in &self.records {
            let raw = RawRecord {
                id: r.id.clone(),
                transcript: r.transcript.clone(),
                paths: r
                    .paths
                    .iter()
                    .map(|(k, p)| (k.to_string(), portable(p)))
                    .collect(),
                duration_s: r.duration_s,
                meta: r.meta.clone(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("records serialize"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn transcripts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.transcript.as_str()).collect()
    }

    pub fn resolve(&self, record: &UtteranceRecord, key: &StreamKey) -> Result<PathBuf> {
        record
            .paths
            .get(key)
            .map(|p| self.dir.join(p))
            .ok_or_else(|| Error::Pairing(format!("utterance {:?} has no {key} dump", record.id)))
    }

    pub fn read_stream(&self, record: &UtteranceRecord, key: &StreamKey) -> Result<EmbeddingSequence> {
        let frames = read_emb(self.resolve(record, key)?)?;
        Ok(EmbeddingSequence::new(record.id.clone(), key.clone(), frames)?)
    }
}

/// Vocabulary over the normalized transcripts of every record.
pub fn build_vocab(records: &[UtteranceRecord]) -> Result<Vocab> {
    let transcripts: Vec<&str> = records.iter().map(|r| r.transcript.as_str()).collect();
    Ok(vocab_from_transcripts(&transcripts)?)
}

fn portable(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// `target` expressed relative to directory `base`; both are made absolute
/// against the current directory first.
pub fn relative_path(base: &Path, target: &Path) -> Result<PathBuf> {
    let abs = |p: &Path| -> Result<PathBuf> {
        let joined = if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().map_err(|e| Error::io(p, e))?.join(p)
        };
        // lexical normalization
        let mut out = PathBuf::new();
        for c in joined.components() {
            match c {
                Component::ParentDir => {
                    out.pop();
                }
                Component::CurDir => {}
                other => out.push(other),
            }
        }
        Ok(out)
    };
    let (base, target) = (abs(base)?, abs(target)?);
    let b: Vec<_> = base.components().collect();
    let t: Vec<_> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c);
    }
    Ok(rel)
}
