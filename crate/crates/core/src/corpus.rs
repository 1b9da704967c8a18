//! BIO-tagged corpora in CoNLL column format: parsing, validation,
//! k-fold splitting, and class statistics.
//!
//! A corpus is a list of sentences, each a parallel (token, tag) pair
//! sequence over a fixed [`Tagset`]. Tags follow the BIO scheme: `B-c`
//! opens a phrase of class `c`, `I-c` continues it, `O` is outside any
//! phrase.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng;

/// Errors produced while building or splitting corpora.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected `token<TAB>tag` or `token tag`, got {found:?}")]
    MalformedLine { line: usize, found: String },
    #[error("line {line}: unknown tag {tag:?} for tagset {tagset:?}")]
    UnknownTag {
        line: usize,
        tag: String,
        tagset: String,
    },
    #[error("no sentences found in input")]
    EmptyCorpus,
    #[error("k = {k} out of range: need 2 <= k <= {sentences} (sentence count)")]
    BadK { k: usize, sentences: usize },
    #[error("invalid class name {0:?}: must be non-empty and contain no whitespace")]
    BadClassName(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("tagset has no classes")]
    NoClasses,
    #[error("sentence has {tokens} tokens but {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("sentence is empty")]
    EmptySentence,
    #[error("empty token at position {0}")]
    EmptyToken(usize),
    #[error("tag id {0} out of range for tagset")]
    TagOutOfRange(u16),
}

/// Identifier of one label in a tagset's derived label set.
///
/// Id 0 is always `O`; class `i` owns ids `1 + 2i` (`B-`) and `2 + 2i`
/// (`I-`). The id one past the last tagset label is reserved for the
/// tokenizer's `X` placeholder (see [`Tagset::x_label`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(pub u16);

impl LabelId {
    pub const OUTSIDE: LabelId = LabelId(0);

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

/// A named set of entity classes and its derived BIO label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagset {
    name: String,
    classes: Vec<String>,
    labels: Vec<String>,
}

impl Tagset {
    /// Builds a tagset from an ordered class list.
    pub fn new(name: &str, classes: &[&str]) -> Result<Self, CorpusError> {
        if classes.is_empty() {
            return Err(CorpusError::NoClasses);
        }
        let mut seen = std::collections::BTreeSet::new();
        for class in classes {
            if class.is_empty() || class.chars().any(char::is_whitespace) {
                return Err(CorpusError::BadClassName(class.to_string()));
            }
            if !seen.insert(*class) {
                return Err(CorpusError::DuplicateClass(class.to_string()));
            }
        }
        let mut labels = Vec::with_capacity(2 * classes.len() + 1);
        labels.push("O".to_string());
        for class in classes {
            labels.push(format!("B-{class}"));
            labels.push(format!("I-{class}"));
        }
        Ok(Self {
            name: name.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            labels,
        })
    }

    /// The 7-class Peyma tagset.
    pub fn peyma() -> Self {
        Self::new(
            "peyma",
            &[
                "Person",
                "Organization",
                "Location",
                "Date",
                "Money",
                "Percent",
                "Time",
            ],
        )
        .expect("builtin tagset is valid")
    }

    /// The 6-class Arman tagset.
    pub fn arman() -> Self {
        Self::new(
            "arman",
            &[
                "Person",
                "Organization",
                "Location",
                "Facility",
                "Product",
                "Event",
            ],
        )
        .expect("builtin tagset is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Number of derived BIO labels: `2 * |classes| + 1`.
    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Label count including the reserved `X` placeholder.
    pub fn extended_label_count(&self) -> usize {
        self.labels.len() + 1
    }

    /// The `X` placeholder id used for intra-word subwords and specials.
    pub fn x_label(&self) -> LabelId {
        LabelId(self.labels.len() as u16)
    }

    pub fn begin(&self, class_idx: usize) -> LabelId {
        debug_assert!(class_idx < self.classes.len());
        LabelId((1 + 2 * class_idx) as u16)
    }

    pub fn inside(&self, class_idx: usize) -> LabelId {
        debug_assert!(class_idx < self.classes.len());
        LabelId((2 + 2 * class_idx) as u16)
    }

    /// Class index of a `B-`/`I-` label; `None` for `O` and `X`.
    pub fn class_of(&self, label: LabelId) -> Option<usize> {
        let id = label.as_usize();
        if id == 0 || id >= self.labels.len() {
            None
        } else {
            Some((id - 1) / 2)
        }
    }

    pub fn is_begin(&self, label: LabelId) -> bool {
        let id = label.as_usize();
        id != 0 && id < self.labels.len() && !id.is_multiple_of(2)
    }

    pub fn is_inside(&self, label: LabelId) -> bool {
        let id = label.as_usize();
        id != 0 && id < self.labels.len() && id.is_multiple_of(2)
    }

    /// Printable name of a label id; the reserved `X` id renders as "X".
    pub fn label_name(&self, label: LabelId) -> &str {
        if label == self.x_label() {
            "X"
        } else {
            &self.labels[label.as_usize()]
        }
    }

    /// Looks up a tag string (`O`, `B-c`, `I-c`) in the derived label set.
    pub fn label_of(&self, tag: &str) -> Option<LabelId> {
        self.labels
            .iter()
            .position(|l| l == tag)
            .map(|i| LabelId(i as u16))
    }
}

/// One sentence: surface tokens with one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<LabelId>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<LabelId>) -> Result<Self, CorpusError> {
        if tokens.len() != tags.len() {
            return Err(CorpusError::LengthMismatch {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        if let Some(pos) = tokens.iter().position(String::is_empty) {
            return Err(CorpusError::EmptyToken(pos));
        }
        Ok(Self { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A corpus of tagged sentences sharing one tagset.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub tagset: Tagset,
    pub sentences: Vec<TaggedSentence>,
    pub source_name: String,
    /// 1-based line of each sentence's first token in the source text.
    pub sentence_lines: Vec<usize>,
}

impl Corpus {
    /// Builds a corpus from already-constructed sentences, checking that
    /// every tag id is in the tagset's label set.
    pub fn from_sentences(
        tagset: Tagset,
        sentences: Vec<TaggedSentence>,
        source_name: &str,
    ) -> Result<Self, CorpusError> {
        if sentences.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        for sentence in &sentences {
            for &tag in &sentence.tags {
                if tag.as_usize() >= tagset.label_count() {
                    return Err(CorpusError::TagOutOfRange(tag.0));
                }
            }
        }
        // Line numbers as if serialized: blocks separated by one blank line.
        let mut sentence_lines = Vec::with_capacity(sentences.len());
        let mut line = 1;
        for sentence in &sentences {
            sentence_lines.push(line);
            line += sentence.len() + 1;
        }
        Ok(Self {
            tagset,
            sentences,
            source_name: source_name.to_string(),
            sentence_lines,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Total token count over all sentences.
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::len).sum()
    }

    /// Sub-corpus over the given sentence indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Corpus, CorpusError> {
        if indices.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Corpus {
            tagset: self.tagset.clone(),
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            source_name: self.source_name.clone(),
            sentence_lines: indices.iter().map(|&i| self.sentence_lines[i]).collect(),
        })
    }
}

/// Parses CoNLL column text: one `token<TAB>tag` (or `token tag`) per
/// line, blank line between sentences. Trailing blank lines are ignored.
pub fn parse_conll(text: &str, tagset: &Tagset, source_name: &str) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut sentence_lines = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<LabelId> = Vec::new();
    let mut start_line = 0usize;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<LabelId>, start: usize| {
        if !tokens.is_empty() {
            sentences.push(TaggedSentence {
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
            });
            sentence_lines.push(start);
        }
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            flush(&mut tokens, &mut tags, start_line);
            continue;
        }
        let (token, tag) = split_columns(line).ok_or_else(|| CorpusError::MalformedLine {
            line: line_no,
            found: line.to_string(),
        })?;
        let label = tagset
            .label_of(tag)
            .ok_or_else(|| CorpusError::UnknownTag {
                line: line_no,
                tag: tag.to_string(),
                tagset: tagset.name.clone(),
            })?;
        if tokens.is_empty() {
            start_line = line_no;
        }
        tokens.push(token.to_string());
        tags.push(label);
    }
    flush(&mut tokens, &mut tags, start_line);

    if sentences.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(Corpus {
        tagset: tagset.clone(),
        sentences,
        source_name: source_name.to_string(),
        sentence_lines,
    })
}

/// Splits a nonblank line into exactly two columns, TAB preferred over a
/// single space. Returns `None` when the line does not have exactly two
/// non-empty columns.
fn split_columns(line: &str) -> Option<(&str, &str)> {
    let (token, tag) = if let Some(pos) = line.find('\t') {
        let (token, rest) = line.split_at(pos);
        (token, &rest[1..])
    } else {
        let pos = line.find(' ')?;
        let (token, rest) = line.split_at(pos);
        (token, &rest[1..])
    };
    if token.is_empty()
        || tag.is_empty()
        || tag.contains('\t')
        || tag.contains(' ')
        || token.contains(' ')
    {
        return None;
    }
    Some((token, tag))
}

/// Serializes a corpus back to CoNLL text with TAB separators; each
/// sentence block is followed by one blank line.
pub fn to_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sentence in &corpus.sentences {
        for (token, &tag) in sentence.tokens.iter().zip(&sentence.tags) {
            out.push_str(token);
            out.push('\t');
            out.push_str(corpus.tagset.label_name(tag));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// A BIO consistency violation: an `I-c` whose predecessor is neither
/// `B-c` nor `I-c` (including `I-c` at sentence start).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub tag: LabelId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "orphan I- tag (id {}) at position {}", self.tag.0, self.position)
    }
}

/// Reports every BIO violation in a sentence; an empty result means the
/// sentence is BIO-consistent.
pub fn validate_bio(sentence: &TaggedSentence, tagset: &Tagset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut prev: Option<LabelId> = None;
    for (position, &tag) in sentence.tags.iter().enumerate() {
        if tagset.is_inside(tag) {
            let class = tagset.class_of(tag);
            let continues = prev.is_some_and(|p| {
                (tagset.is_begin(p) || tagset.is_inside(p)) && tagset.class_of(p) == class
            });
            if !continues {
                violations.push(Violation { position, tag });
            }
        }
        prev = Some(tag);
    }
    violations
}

/// Repairs BIO violations by promoting orphan `I-c` to `B-c` (the
/// conlleval convention). Repairs are applied left to right, so an `I-c`
/// that follows a repaired position is kept.
pub fn repair_bio(sentence: &TaggedSentence, tagset: &Tagset) -> TaggedSentence {
    let mut tags = sentence.tags.clone();
    for position in 0..tags.len() {
        let tag = tags[position];
        if tagset.is_inside(tag) {
            let class = tagset.class_of(tag);
            let continues = position > 0 && {
                let p = tags[position - 1];
                (tagset.is_begin(p) || tagset.is_inside(p)) && tagset.class_of(p) == class
            };
            if !continues {
                tags[position] = tagset.begin(class.expect("inside label has a class"));
            }
        }
    }
    TaggedSentence {
        tokens: sentence.tokens.clone(),
        tags,
    }
}

/// Assignment of each sentence to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    /// Per-sentence fold index in `[0, k)`, indexed by corpus order.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    /// Sentence indices of one fold, in corpus order.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == fold).then_some(i))
            .collect()
    }

    /// Sentence indices NOT in `fold`, in corpus order.
    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f != fold).then_some(i))
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits a corpus into `k` folds: indices are shuffled with a ChaCha8
/// permutation seeded by `seed`, then dealt round-robin. Fold sizes
/// differ by at most one.
pub fn split_kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldSplit, CorpusError> {
    let n = corpus.len();
    if k < 2 || k > n {
        return Err(CorpusError::BadK { k, sentences: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut assignment = vec![0usize; n];
    for (position, &sentence) in order.iter().enumerate() {
        assignment[sentence] = position % k;
    }
    Ok(FoldSplit { k, assignment, seed })
}

/// Per-class phrase and token counts plus corpus totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDistribution {
    /// Phrases per class: each `B-c` tag opens exactly one phrase.
    pub phrase_counts: Vec<u64>,
    /// Tokens per class: positions tagged `B-c` or `I-c`.
    pub token_counts: Vec<u64>,
    pub total_tokens: u64,
    pub total_sentences: u64,
}

impl ClassDistribution {
    /// Non-empty classes as a `class name -> phrase count` map.
    pub fn phrase_map<'a>(&self, tagset: &'a Tagset) -> BTreeMap<&'a str, u64> {
        tagset
            .classes()
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.phrase_counts[i] > 0)
            .map(|(i, c)| (c.as_str(), self.phrase_counts[i]))
            .collect()
    }
}

/// Counts BIO phrases and tokens per class over the whole corpus.
pub fn class_distribution(corpus: &Corpus) -> ClassDistribution {
    let classes = corpus.tagset.classes().len();
    let mut phrase_counts = vec![0u64; classes];
    let mut token_counts = vec![0u64; classes];
    let mut total_tokens = 0u64;
    for sentence in &corpus.sentences {
        total_tokens += sentence.len() as u64;
        for &tag in &sentence.tags {
            if let Some(class) = corpus.tagset.class_of(tag) {
                token_counts[class] += 1;
                if corpus.tagset.is_begin(tag) {
                    phrase_counts[class] += 1;
                }
            }
        }
    }
    ClassDistribution {
        phrase_counts,
        token_counts,
        total_tokens,
        total_sentences: corpus.len() as u64,
    }
}
