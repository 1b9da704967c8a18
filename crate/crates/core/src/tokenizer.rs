//! Byte-pair-encoding subword tokenizer with word-label alignment.
//!
//! Words are split into characters and merged back bottom-up using a
//! learned merge table; merges never cross word boundaries. When a word
//! becomes several subwords, only its first subword keeps the word's BIO
//! tag — the rest take the `X` placeholder, as do the BOS/EOS specials.
//! [`project_to_words`] inverts the alignment after decoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::corpus::{Corpus, LabelId, TaggedSentence, Tagset};

/// Marker prefixed to non-initial subwords in surface form, e.g. `##ing`.
pub const CONTINUATION_MARKER: &str = "##";

/// Special token names, in id order starting at 0.
pub const SPECIAL_NAMES: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("vocab size {vocab_size} too small: need > {required} (specials + distinct characters)")]
    VocabTooSmall { vocab_size: usize, required: usize },
    #[error("word {word_index} encodes to {subwords} subwords, more than max_len - 2 = {limit}")]
    WordTooLong {
        word_index: usize,
        subwords: usize,
        limit: usize,
    },
    #[error("expected {expected} predictions, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("max_len {0} too small: need at least 3 (BOS + subword + EOS)")]
    BadMaxLen(usize),
    #[error("bad vocabulary file: {0}")]
    BadVocabFile(String),
    #[error("bad merges file: {0}")]
    BadMergesFile(String),
}

/// Learned BPE merge ranks and subword vocabulary.
///
/// Vocabulary ids are dense: specials occupy `0..4`, then the base
/// characters in sorted order, then one entry per merge in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTable {
    vocab: Vec<String>,
    vocab_index: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), u32>,
    continuation_marker: String,
}

impl MergeTable {
    fn build(vocab: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let vocab_index = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, pair)| (pair.clone(), i as u32))
            .collect();
        Self {
            vocab,
            vocab_index,
            merges,
            ranks,
            continuation_marker: CONTINUATION_MARKER.to_string(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn continuation_marker(&self) -> &str {
        &self.continuation_marker
    }

    pub fn id_of(&self, subword: &str) -> Option<u32> {
        self.vocab_index.get(subword).copied()
    }

    pub fn subword(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    /// Splits a word into merge-table symbols (unmarked subword strings).
    ///
    /// Starts from single characters and repeatedly applies the
    /// lowest-ranked applicable merge until no merge applies.
    fn split_symbols(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..symbols.len().saturating_sub(1) {
                let key = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.ranks.get(&key) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (left, right) = self.merges[rank as usize].clone();
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Encodes one word as vocabulary ids; symbols missing from the
    /// vocabulary fall back to UNK. Always returns at least one id.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        if word.is_empty() {
            return vec![UNK_ID];
        }
        self.split_symbols(word)
            .iter()
            .map(|s| self.id_of(s).unwrap_or(UNK_ID))
            .collect()
    }

    /// Surface subwords of one word, continuation marker on non-initial
    /// pieces. Stripping the markers and concatenating reproduces the word.
    pub fn encode_word_pieces(&self, word: &str) -> Vec<String> {
        if word.is_empty() {
            return vec![SPECIAL_NAMES[UNK_ID as usize].to_string()];
        }
        self.split_symbols(word)
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == 0 {
                    s.clone()
                } else {
                    format!("{}{s}", self.continuation_marker)
                }
            })
            .collect()
    }

    /// Vocabulary as text: one subword per line, line number = id.
    pub fn vocab_text(&self) -> String {
        let mut out = String::new();
        for subword in &self.vocab {
            out.push_str(subword);
            out.push('\n');
        }
        out
    }

    /// Merge list as text: one `left right` pair per line in rank order.
    pub fn merges_text(&self) -> String {
        let mut out = String::new();
        for (left, right) in &self.merges {
            out.push_str(left);
            out.push(' ');
            out.push_str(right);
            out.push('\n');
        }
        out
    }

    /// Reconstructs a merge table from the two text files.
    pub fn from_text(vocab_text: &str, merges_text: &str) -> Result<Self, TokenizerError> {
        let mut vocab = Vec::new();
        for (idx, line) in vocab_text.split('\n').enumerate() {
            if line.is_empty() {
                if idx + 1 == vocab_text.split('\n').count() {
                    break;
                }
                return Err(TokenizerError::BadVocabFile(format!(
                    "empty subword at line {}",
                    idx + 1
                )));
            }
            vocab.push(line.to_string());
        }
        if vocab.len() < SPECIAL_NAMES.len() {
            return Err(TokenizerError::BadVocabFile(
                "fewer entries than special tokens".to_string(),
            ));
        }
        for (id, name) in SPECIAL_NAMES.iter().enumerate() {
            if vocab[id] != *name {
                return Err(TokenizerError::BadVocabFile(format!(
                    "line {} must be the special token {name:?}, got {:?}",
                    id + 1,
                    vocab[id]
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for subword in &vocab {
            if !seen.insert(subword.clone()) {
                return Err(TokenizerError::BadVocabFile(format!(
                    "duplicate subword {subword:?}"
                )));
            }
        }

        let mut merges = Vec::new();
        for (idx, line) in merges_text.split('\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let Some((left, right)) = line.split_once(' ') else {
                return Err(TokenizerError::BadMergesFile(format!(
                    "line {}: expected `left right`",
                    idx + 1
                )));
            };
            if left.is_empty() || right.is_empty() || right.contains(' ') {
                return Err(TokenizerError::BadMergesFile(format!(
                    "line {}: expected exactly two symbols",
                    idx + 1
                )));
            }
            merges.push((left.to_string(), right.to_string()));
        }
        let table = Self::build(vocab, merges);
        for (left, right) in &table.merges {
            let output = format!("{left}{right}");
            if table.id_of(&output).is_none() {
                return Err(TokenizerError::BadMergesFile(format!(
                    "merge output {output:?} missing from vocabulary"
                )));
            }
        }
        Ok(table)
    }
}

/// Counts surface words of a corpus, deterministically ordered.
pub fn word_counts(corpus: &Corpus) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for sentence in &corpus.sentences {
        for token in &sentence.tokens {
            *counts.entry(token.clone()).or_insert(0u64) += 1;
        }
    }
    counts
}

/// Trains a BPE merge table on a word multiset.
///
/// Starts from single characters, then repeatedly merges the most
/// frequent adjacent symbol pair (ties broken by lexicographic order of
/// the pair) until `vocab_size` entries exist or no pair occurs at least
/// twice. Merges are word-internal only.
pub fn train_bpe(
    words: &BTreeMap<String, u64>,
    vocab_size: usize,
) -> Result<MergeTable, TokenizerError> {
    let alphabet: BTreeSet<char> = words.keys().flat_map(|w| w.chars()).collect();
    let required = SPECIAL_NAMES.len() + alphabet.len();
    if vocab_size <= required {
        return Err(TokenizerError::VocabTooSmall {
            vocab_size,
            required,
        });
    }

    let mut vocab: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
    vocab.extend(alphabet.iter().map(|c| c.to_string()));
    let special_set: BTreeSet<&str> = SPECIAL_NAMES.into_iter().collect();

    let mut sequences: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|(word, &count)| (word.chars().map(String::from).collect(), count))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while vocab.len() < vocab_size {
        // BTreeMap iteration is lexicographic on (left, right), so the
        // first pair seen at the maximum count is the tie-break winner.
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, count) in &sequences {
            for window in symbols.windows(2) {
                let key = (window[0].clone(), window[1].clone());
                *pair_counts.entry(key).or_insert(0) += count;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &count) in &pair_counts {
            if special_set.contains(format!("{}{}", pair.0, pair.1).as_str()) {
                continue;
            }
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let (left, right) = pair.clone();
        let output = format!("{left}{right}");
        for (symbols, _) in &mut sequences {
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    merged.push(output.clone());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = merged;
        }
        vocab.push(output);
        merges.push((left, right));
    }
    Ok(MergeTable::build(vocab, merges))
}

/// Words dropped from the end of a sequence to respect `max_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub kept_words: usize,
    pub dropped_words: usize,
}

/// A sentence encoded as subwords with aligned labels.
///
/// Layout is always `BOS, w0 subwords.., w1 subwords.., .., EOS`. The
/// first subword of word `i` carries the word's tag; every other
/// position (continuations and specials) carries the tagset's `X` id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSequence {
    pub subword_ids: Vec<u32>,
    /// Label ids over the extended set: tagset labels plus `X`.
    pub labels: Vec<LabelId>,
    /// Originating word index per subword; `None` at BOS/EOS/PAD.
    pub token_of: Vec<Option<usize>>,
    pub attention_mask: Vec<bool>,
    pub truncation: Option<Truncation>,
}

impl AlignedSequence {
    pub fn len(&self) -> usize {
        self.subword_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subword_ids.is_empty()
    }

    /// Number of source words represented in the sequence.
    pub fn word_count(&self) -> usize {
        self.token_of
            .iter()
            .filter_map(|t| *t)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// True at each word's first subword — the positions where labels
    /// are supervised and decoding applies.
    pub fn supervised_mask(&self) -> Vec<bool> {
        let mut seen = vec![false; self.word_count()];
        self.token_of
            .iter()
            .map(|t| match t {
                Some(word) if !seen[*word] => {
                    seen[*word] = true;
                    true
                }
                _ => false,
            })
            .collect()
    }

    /// Pads the sequence in place to `len` with PAD/X/unattended slots.
    pub fn pad_to(&mut self, len: usize, x_label: LabelId) {
        while self.len() < len {
            self.subword_ids.push(PAD_ID);
            self.labels.push(x_label);
            self.token_of.push(None);
            self.attention_mask.push(false);
        }
    }
}

/// Aligns a tagged sentence to subwords under `max_len`.
///
/// Sequences that would exceed `max_len` are cut at a word boundary
/// (never mid-word) and the cut is reported via
/// [`AlignedSequence::truncation`]. A single word whose encoding exceeds
/// `max_len - 2` cannot fit in any sequence and is an error.
pub fn align(
    sentence: &TaggedSentence,
    merges: &MergeTable,
    tagset: &Tagset,
    max_len: usize,
) -> Result<AlignedSequence, TokenizerError> {
    if max_len < 3 {
        return Err(TokenizerError::BadMaxLen(max_len));
    }
    let capacity = max_len - 2;
    let encodings: Vec<Vec<u32>> = sentence
        .tokens
        .iter()
        .map(|word| merges.encode_word(word))
        .collect();
    for (word_index, encoding) in encodings.iter().enumerate() {
        if encoding.len() > capacity {
            return Err(TokenizerError::WordTooLong {
                word_index,
                subwords: encoding.len(),
                limit: capacity,
            });
        }
    }

    let mut kept_words = 0;
    let mut used = 0;
    for encoding in &encodings {
        if used + encoding.len() > capacity {
            break;
        }
        used += encoding.len();
        kept_words += 1;
    }
    let truncation = (kept_words < sentence.len()).then_some(Truncation {
        kept_words,
        dropped_words: sentence.len() - kept_words,
    });

    let x = tagset.x_label();
    let mut aligned = AlignedSequence {
        subword_ids: vec![BOS_ID],
        labels: vec![x],
        token_of: vec![None],
        attention_mask: vec![true],
        truncation,
    };
    for (word, encoding) in encodings.iter().take(kept_words).enumerate() {
        for (i, &id) in encoding.iter().enumerate() {
            aligned.subword_ids.push(id);
            aligned
                .labels
                .push(if i == 0 { sentence.tags[word] } else { x });
            aligned.token_of.push(Some(word));
            aligned.attention_mask.push(true);
        }
    }
    aligned.subword_ids.push(EOS_ID);
    aligned.labels.push(x);
    aligned.token_of.push(None);
    aligned.attention_mask.push(true);
    Ok(aligned)
}

/// Word-level predictions recovered from subword predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPredictions {
    pub tags: Vec<LabelId>,
    /// How many first-subword slots predicted `X` and were coerced to `O`.
    pub coerced_x: usize,
}

/// Projects per-subword predictions back to one tag per source word: the
/// prediction at each word's first subword. Predictions at `X` positions
/// are discarded; a predicted `X` at a first subword is coerced to `O`.
pub fn project_to_words(
    aligned: &AlignedSequence,
    predictions: &[LabelId],
    tagset: &Tagset,
) -> Result<WordPredictions, TokenizerError> {
    if predictions.len() != aligned.len() {
        return Err(TokenizerError::LengthMismatch {
            expected: aligned.len(),
            got: predictions.len(),
        });
    }
    let x = tagset.x_label();
    let mut tags = vec![LabelId::OUTSIDE; aligned.word_count()];
    let mut filled = vec![false; aligned.word_count()];
    let mut coerced_x = 0;
    for (position, token) in aligned.token_of.iter().enumerate() {
        if let Some(word) = *token {
            if !filled[word] {
                filled[word] = true;
                let prediction = predictions[position];
                tags[word] = if prediction == x {
                    coerced_x += 1;
                    LabelId::OUTSIDE
                } else {
                    prediction
                };
            }
        }
    }
    Ok(WordPredictions { tags, coerced_x })
}
