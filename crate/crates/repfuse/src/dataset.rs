use repfuse_core::trainer::{Executor, Sample};
use repfuse_core::{StreamKey, Vocab};

use crate::error::{Error, Result};
use crate::manifest::Manifest;

/// Loads one training sample per manifest record from the reference stream
/// and, when given, the delta stream.
pub fn load_samples<E: Executor>(
    manifest: &Manifest,
    reference: &StreamKey,
    delta: Option<&StreamKey>,
    vocab: &Vocab,
    exec: &E,
) -> Result<Vec<Sample>> {
    let loaded = exec.map_indexed(manifest.records.len(), |i| -> Result<Sample> {
        let rec = &manifest.records[i];
        let r = manifest.read_stream(rec, reference)?;
        let d = delta.map(|k| manifest.read_stream(rec, k)).transpose()?;
        if let Some(d) = &d {
            if d.num_frames() != r.num_frames() {
                return Err(Error::Pairing(format!(
                    "utterance {:?}: {reference} has {} frames, {} has {}",
                    rec.id,
                    r.num_frames(),
                    d.key,
                    d.num_frames()
                )));
            }
        }
        Ok(Sample::new(
            rec.id.clone(),
            r.frames,
            d.map(|d| d.frames),
            rec.transcript.clone(),
            vocab,
        )?)
    });
    loaded.into_iter().collect()
}

/// Feature widths `(d_ref, d_delta)` of a non-empty sample set.
pub fn widths(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Pairing("manifest has no records".into()))?;
    let d_ref = first.reference.cols();
    let d_delta = first.delta.as_ref().map_or(d_ref, |d| d.cols());
    for s in samples {
        if s.reference.cols() != d_ref || s.delta.as_ref().is_some_and(|d| d.cols() != d_delta) {
            return Err(Error::Pairing(format!("utterance {:?} has inconsistent feature width", s.id)));
        }
    }
    Ok((d_ref, d_delta))
}
