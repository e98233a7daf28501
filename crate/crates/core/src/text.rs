//! Transcript normalization and the character vocabulary the CTC head
//! predicts over.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Index of the CTC blank in every [`Vocab`].
pub const BLANK: usize = 0;

/// Lowercases, keeps letters, digits and apostrophes, drops all other
/// punctuation, collapses whitespace runs to a single space and trims.
pub fn normalize_transcript(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_alphanumeric() || ch == '\'' {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

/// Character inventory with the blank reserved at index 0. Symbol `i` of
/// [`Vocab::symbols`] has CTC index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
}

impl Vocab {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Domain("vocabulary needs at least one symbol".into()));
        }
        let mut seen = BTreeSet::new();
        for &c in &symbols {
            if !seen.insert(c) {
                return Err(Error::Domain(alloc::format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// Number of CTC classes, blank included.
    pub fn len(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + 1)
    }

    /// Symbol for a non-blank index.
    pub fn symbol(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.symbols.get(i).copied())
    }

    /// Maps a normalized transcript onto label indices.
    pub fn encode(&self, text: &str) -> Result<LabelSeq> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Domain(alloc::format!("symbol {c:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()
            .map(|ids| LabelSeq { ids })
    }

    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

/// Sorted set of characters occurring in the (already normalized)
/// transcripts, with the blank at index 0.
pub fn build_vocab<S: AsRef<str>>(transcripts: &[S]) -> Result<Vocab> {
    if transcripts.is_empty() {
        return Err(Error::Domain("cannot build a vocabulary from zero transcripts".into()));
    }
    let chars: BTreeSet<char> = transcripts.iter().flat_map(|t| t.as_ref().chars()).collect();
    Vocab::new(chars.into_iter().collect())
}

/// Target label sequence for CTC. Never contains the blank.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSeq {
    ids: Vec<usize>,
}

impl LabelSeq {
    /// Validates every id against a vocabulary of `num_classes` (blank
    /// included).
    pub fn new(ids: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i == BLANK || i >= num_classes) {
            return Err(Error::Domain(alloc::format!(
                "label id {bad} outside [1, {}]",
                num_classes.saturating_sub(1)
            )));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Minimum number of frames a CTC alignment of this target needs: one per
    /// label plus one blank between each pair of equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.ids.len() + self.ids.windows(2).filter(|w| w[0] == w[1]).count()
    }
}
