//! Word and character error rates and a paired bootstrap test between two
//! systems scored on the same utterances.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::AddAssign;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub sub: usize,
    pub ins: usize,
    pub del: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.sub + self.ins + self.del
    }
}

impl AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.sub += rhs.sub;
        self.ins += rhs.ins;
        self.del += rhs.del;
    }
}

/// Minimal edit decomposition turning `reference` into `hypothesis`.
///
/// The backtrace prefers substitution (or match), then deletion, then
/// insertion whenever several moves are optimal.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[(i - 1) * w + j] + 1;
            let ins = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut edits = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if cost[(i - 1) * w + j - 1] + mismatch == here {
                edits.sub += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            edits.del += 1;
            i -= 1;
        } else {
            edits.ins += 1;
            j -= 1;
        }
    }
    edits
}

/// One scored utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub utterance_id: String,
    pub ref_words: Vec<String>,
    pub hyp_words: Vec<String>,
    pub edits: EditCounts,
}

impl ScoredPair {
    pub fn new(utterance_id: impl Into<String>, reference: &str, hypothesis: &str) -> Self {
        let ref_words = tokenize(reference);
        let hyp_words = tokenize(hypothesis);
        let edits = align(&ref_words, &hyp_words);
        Self {
            utterance_id: utterance_id.into(),
            ref_words,
            hyp_words,
            edits,
        }
    }

    /// Utterance-level WER; `0` for an empty reference with an empty
    /// hypothesis, `inf` for an empty reference otherwise.
    pub fn wer(&self) -> f64 {
        match (self.edits.total(), self.ref_words.len()) {
            (0, _) => 0.0,
            (_, 0) => f64::INFINITY,
            (e, n) => e as f64 / n as f64,
        }
    }
}

/// Splits on single spaces, dropping empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(' ').filter(|w| !w.is_empty()).map(ToString::to_string).collect()
}

/// Corpus-level result of [`wer`].
#[derive(Debug, Clone, PartialEq)]
pub struct WerReport {
    pub wer: f64,
    pub edits: EditCounts,
    pub ref_words: usize,
    pub pairs: Vec<ScoredPair>,
}

/// Corpus WER `(ΣS + ΣI + ΣD) / Σ|ref|`; utterance ids are list positions.
pub fn wer<S: AsRef<str>>(refs: &[S], hyps: &[S]) -> Result<WerReport> {
    let ids: Vec<String> = (0..refs.len()).map(|i| i.to_string()).collect();
    wer_with_ids(&ids, refs, hyps)
}

pub fn wer_with_ids<I: AsRef<str>, S: AsRef<str>>(ids: &[I], refs: &[S], hyps: &[S]) -> Result<WerReport> {
    if refs.len() != hyps.len() || ids.len() != refs.len() {
        return Err(Error::Shape {
            op: "wer",
            left: alloc::format!("{} references", refs.len()),
            right: alloc::format!("{} hypotheses ({} ids)", hyps.len(), ids.len()),
        });
    }
    let pairs: Vec<ScoredPair> = ids
        .iter()
        .zip(refs.iter().zip(hyps))
        .map(|(id, (r, h))| ScoredPair::new(id.as_ref(), r.as_ref(), h.as_ref()))
        .collect();
    summarize(pairs)
}

/// Aggregates already-scored pairs into a corpus report.
pub fn summarize(pairs: Vec<ScoredPair>) -> Result<WerReport> {
    let ref_words: usize = pairs.iter().map(|p| p.ref_words.len()).sum();
    if ref_words == 0 {
        return Err(Error::Domain("WER undefined: zero reference words".into()));
    }
    let mut edits = EditCounts::default();
    for p in &pairs {
        edits += p.edits;
    }
    Ok(WerReport {
        wer: edits.total() as f64 / ref_words as f64,
        edits,
        ref_words,
        pairs,
    })
}

/// Corpus character error rate over the full strings, spaces included.
pub fn cer<S: AsRef<str>>(refs: &[S], hyps: &[S]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::Shape {
            op: "cer",
            left: alloc::format!("{} references", refs.len()),
            right: alloc::format!("{} hypotheses", hyps.len()),
        });
    }
    let mut errors = 0usize;
    let mut total = 0usize;
    for (r, h) in refs.iter().zip(hyps) {
        let rc: Vec<char> = r.as_ref().chars().collect();
        let hc: Vec<char> = h.as_ref().chars().collect();
        errors += align(&rc, &hc).total();
        total += rc.len();
    }
    if total == 0 {
        return Err(Error::Domain("CER undefined: zero reference characters".into()));
    }
    Ok(errors as f64 / total as f64)
}

/// One-sided paired bootstrap of "system B has lower WER than system A".
///
/// Returns the fraction of utterance resamples in which B fails to beat A,
/// i.e. `WER(B) >= WER(A)`; small values mean B is significantly better.
/// Resample `i` draws from its own generator seeded with `seed + i`.
pub fn paired_bootstrap(
    pairs_a: &[ScoredPair],
    pairs_b: &[ScoredPair],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    let (a, b) = paired_counts(pairs_a, pairs_b)?;
    if resamples == 0 {
        return Err(Error::Domain("paired bootstrap needs at least one resample".into()));
    }
    let n = a.len();
    let mut b_not_better = 0usize;
    for i in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let (mut err_a, mut len_a, mut err_b, mut len_b) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..n {
            let k = rng.random_range(0..n);
            err_a += a[k].0;
            len_a += a[k].1;
            err_b += b[k].0;
            len_b += b[k].1;
        }
        // err_b/len_b >= err_a/len_a, cross-multiplied; an empty resample is a tie.
        let tie_or_worse = match (len_a, len_b) {
            (0, _) | (_, 0) => true,
            _ => (err_b as u128) * (len_a as u128) >= (err_a as u128) * (len_b as u128),
        };
        b_not_better += usize::from(tie_or_worse);
    }
    Ok(b_not_better as f64 / resamples as f64)
}

type Counts = Vec<(usize, usize)>;

// (errors, reference length) per utterance, with B reordered to A's ids.
fn paired_counts(pairs_a: &[ScoredPair], pairs_b: &[ScoredPair]) -> Result<(Counts, Counts)> {
    if pairs_a.is_empty() {
        return Err(Error::Domain("paired bootstrap over zero utterances".into()));
    }
    let by_id: BTreeMap<&str, &ScoredPair> =
        pairs_b.iter().map(|p| (p.utterance_id.as_str(), p)).collect();
    if by_id.len() != pairs_b.len() || pairs_a.len() != pairs_b.len() {
        return Err(Error::Pairing(alloc::format!(
            "systems cover different utterance sets ({} vs {} records)",
            pairs_a.len(),
            pairs_b.len()
        )));
    }
    let mut a = Vec::with_capacity(pairs_a.len());
    let mut b = Vec::with_capacity(pairs_a.len());
    for p in pairs_a {
        let q = by_id.get(p.utterance_id.as_str()).ok_or_else(|| {
            Error::Pairing(alloc::format!("utterance {:?} missing from system B", p.utterance_id))
        })?;
        a.push((p.edits.total(), p.ref_words.len()));
        b.push((q.edits.total(), q.ref_words.len()));
    }
    Ok((a, b))
}
