//! Word-level vocabulary and token sequences.
//!
//! Text is normalized to lowercase alphanumeric words (punctuation acts as
//! a separator and is dropped). The vocabulary reserves four indices --
//! pad, start, end, unknown -- ahead of the corpus words, which are stored
//! in sorted order so that building from the same corpus is deterministic
//! regardless of sentence order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Padding index for batch alignment; masked out of every loss.
pub const PAD_ID: u32 = 0;
/// Sequence-start marker (reserved; plumbing that needs it may emit it).
pub const START_ID: u32 = 1;
/// Sequence-end marker (reserved).
pub const END_ID: u32 = 2;
/// Out-of-vocabulary index.
pub const UNK_ID: u32 = 3;

/// Printable forms of the reserved indices, in index order.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Splits text into normalized words: lowercased maximal runs of
/// alphanumeric characters (plus intra-word apostrophes dropped).
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Bidirectional token/index map with reserved control indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from a corpus: reserved tokens first, then the
    /// corpus words deduplicated and sorted.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words: Vec<String> = corpus.into_iter().flat_map(|s| normalize_words(s)).collect();
        words.sort_unstable();
        words.dedup();
        let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !RESERVED_TOKENS.contains(&w.as_str())));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Total number of indices, reserved ones included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Token text for an index.
    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Index of a word; unknown words map to [`UNK_ID`].
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// True when the word is in the vocabulary proper.
    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Corpus words (excluding the reserved tokens), in index order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens[RESERVED_TOKENS.len()..].iter().map(String::as_str)
    }
}

/// A bounded, validated sequence of vocabulary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    truncated: bool,
}

impl TokenSequence {
    /// Wraps indices after bounds-checking them against the vocabulary.
    pub fn from_ids(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Degenerate("empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(TokenSequence { ids, truncated: false })
    }

    /// The indices.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false: empty sequences cannot be constructed.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when tokenization dropped trailing words to fit the length cap.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Tokenizes text against a vocabulary, truncating at `max_len` (recorded
/// on the sequence rather than silently discarded).
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let words = normalize_words(text);
    if words.is_empty() {
        return Err(Error::Degenerate(format!("no words to tokenize in {text:?}")));
    }
    let truncated = words.len() > max_len;
    let ids = words.iter().take(max_len).map(|w| vocab.id(w)).collect();
    Ok(TokenSequence { ids, truncated })
}

/// Renders a sequence back to text. Control tokens (pad/start/end) are
/// skipped; unknown indices render as their placeholder.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocab) -> String {
    seq.ids
        .iter()
        .filter(|&&id| id != PAD_ID && id != START_ID && id != END_ID)
        .map(|&id| vocab.token(id).unwrap_or(RESERVED_TOKENS[UNK_ID as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}
