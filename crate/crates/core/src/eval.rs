//! CoNLL-style scoring at word and phrase level.
//!
//! Word level scores each non-`O` tag (`B-c`, `I-c`) as its own
//! category over token positions. Phrase level extracts spans and
//! counts a prediction as correct only when class and exact boundaries
//! match a gold span. "All classes" totals are micro-averages (pooled
//! counts); `O` is excluded from word-level scoring entirely.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::corpus::{Corpus, LabelId, Tagset};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("gold has {gold} sentences, predictions have {pred}")]
    SentenceCountMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold has {gold} tags, prediction has {pred}")]
    ShapeMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error("line {line}: token {gold:?} in gold does not match {pred:?} in predictions")]
    TokenMismatch {
        line: usize,
        gold: String,
        pred: String,
    },
    #[error("reports built from different tagsets")]
    TagsetMismatch,
    #[error("tag id {0} outside the tagset label set")]
    TagOutOfRange(u16),
    #[error("bad metrics file: {0}")]
    BadMetrics(String),
}

/// An entity phrase: class plus half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

/// What to do with an `I-c` that has no live span of class `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrphanPolicy {
    /// Open a new span (conlleval behavior).
    #[default]
    Open,
    /// Treat the position as outside.
    Drop,
}

/// True-positive / predicted / gold tallies behind one P/R/F1 row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PrCounts {
    pub tp: u64,
    pub pred: u64,
    pub gold: u64,
}

impl PrCounts {
    pub fn precision(&self) -> f64 {
        if self.pred == 0 {
            0.0
        } else {
            self.tp as f64 / self.pred as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.tp as f64 / self.gold as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn precision_defined(&self) -> bool {
        self.pred > 0
    }

    pub fn recall_defined(&self) -> bool {
        self.gold > 0
    }

    pub fn f1_defined(&self) -> bool {
        self.precision() + self.recall() > 0.0
    }

    pub fn add(&mut self, other: PrCounts) {
        self.tp += other.tp;
        self.pred += other.pred;
        self.gold += other.gold;
    }
}

/// Per-tag and per-class counts for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tagset: Tagset,
    /// Word-level counts per non-`O` tag; index = label id - 1.
    pub word_tags: Vec<PrCounts>,
    /// Phrase-level counts per class index.
    pub phrase_classes: Vec<PrCounts>,
}

impl EvalReport {
    /// Micro totals over all non-`O` tags.
    pub fn word_total(&self) -> PrCounts {
        let mut total = PrCounts::default();
        for counts in &self.word_tags {
            total.add(*counts);
        }
        total
    }

    /// Micro totals over all classes.
    pub fn phrase_total(&self) -> PrCounts {
        let mut total = PrCounts::default();
        for counts in &self.phrase_classes {
            total.add(*counts);
        }
        total
    }

    /// Pools another report's counts into this one (micro aggregation).
    pub fn merge(&mut self, other: &EvalReport) -> Result<(), EvalError> {
        if self.tagset != other.tagset {
            return Err(EvalError::TagsetMismatch);
        }
        for (mine, theirs) in self.word_tags.iter_mut().zip(&other.word_tags) {
            mine.add(*theirs);
        }
        for (mine, theirs) in self.phrase_classes.iter_mut().zip(&other.phrase_classes) {
            mine.add(*theirs);
        }
        Ok(())
    }
}

/// Extracts entity spans from a BIO tag sequence (conlleval rules: an
/// orphan `I-c` opens a span).
pub fn extract_spans(tags: &[LabelId], tagset: &Tagset) -> Vec<Span> {
    extract_spans_with(tags, tagset, OrphanPolicy::Open)
}

/// Span extraction with an explicit orphan policy.
pub fn extract_spans_with(tags: &[LabelId], tagset: &Tagset, policy: OrphanPolicy) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (position, &tag) in tags.iter().enumerate() {
        let class = tagset.class_of(tag);
        let continues = tagset.is_inside(tag)
            && open.is_some_and(|span| Some(span.class) == class);
        if continues {
            if let Some(span) = open.as_mut() {
                span.end = position + 1;
            }
            continue;
        }
        if let Some(span) = open.take() {
            spans.push(span);
        }
        let opens = tagset.is_begin(tag)
            || (tagset.is_inside(tag) && policy == OrphanPolicy::Open);
        if opens {
            open = Some(Span {
                class: class.expect("B-/I- labels have a class"),
                start: position,
                end: position + 1,
            });
        }
    }
    if let Some(span) = open {
        spans.push(span);
    }
    spans
}

fn check_shapes(gold: &[Vec<LabelId>], pred: &[Vec<LabelId>]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (sentence, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::ShapeMismatch {
                sentence,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

fn check_tags(tags: &[Vec<LabelId>], tagset: &Tagset) -> Result<(), EvalError> {
    for sentence in tags {
        for &tag in sentence {
            if tag.as_usize() >= tagset.label_count() {
                return Err(EvalError::TagOutOfRange(tag.0));
            }
        }
    }
    Ok(())
}

/// Phrase-level counts per class: a predicted span is a true positive
/// iff an identical `(class, start, end)` span exists in gold for that
/// sentence.
pub fn phrase_f1(
    gold: &[Vec<LabelId>],
    pred: &[Vec<LabelId>],
    tagset: &Tagset,
) -> Result<Vec<PrCounts>, EvalError> {
    phrase_f1_with(gold, pred, tagset, OrphanPolicy::Open)
}

/// Phrase-level counts with an explicit orphan policy.
pub fn phrase_f1_with(
    gold: &[Vec<LabelId>],
    pred: &[Vec<LabelId>],
    tagset: &Tagset,
    policy: OrphanPolicy,
) -> Result<Vec<PrCounts>, EvalError> {
    check_shapes(gold, pred)?;
    check_tags(gold, tagset)?;
    check_tags(pred, tagset)?;
    let mut classes = vec![PrCounts::default(); tagset.classes().len()];
    for (gold_tags, pred_tags) in gold.iter().zip(pred) {
        let gold_spans: BTreeSet<Span> =
            extract_spans_with(gold_tags, tagset, policy).into_iter().collect();
        let pred_spans: BTreeSet<Span> =
            extract_spans_with(pred_tags, tagset, policy).into_iter().collect();
        for span in &gold_spans {
            classes[span.class].gold += 1;
        }
        for span in &pred_spans {
            classes[span.class].pred += 1;
            if gold_spans.contains(span) {
                classes[span.class].tp += 1;
            }
        }
    }
    Ok(classes)
}

/// Word-level counts per non-`O` tag: `B-c` and `I-c` are scored as
/// their own categories over token positions; `O` is excluded.
pub fn word_f1(
    gold: &[Vec<LabelId>],
    pred: &[Vec<LabelId>],
    tagset: &Tagset,
) -> Result<Vec<PrCounts>, EvalError> {
    check_shapes(gold, pred)?;
    check_tags(gold, tagset)?;
    check_tags(pred, tagset)?;
    let mut tags = vec![PrCounts::default(); tagset.label_count() - 1];
    for (gold_tags, pred_tags) in gold.iter().zip(pred) {
        for (&g, &p) in gold_tags.iter().zip(pred_tags) {
            if g != LabelId::OUTSIDE {
                tags[g.as_usize() - 1].gold += 1;
            }
            if p != LabelId::OUTSIDE {
                tags[p.as_usize() - 1].pred += 1;
                if g == p {
                    tags[p.as_usize() - 1].tp += 1;
                }
            }
        }
    }
    Ok(tags)
}

/// Scores predicted tags against a gold corpus at both levels.
pub fn evaluate_corpus(gold: &Corpus, pred: &[Vec<LabelId>]) -> Result<EvalReport, EvalError> {
    let gold_tags: Vec<Vec<LabelId>> = gold.sentences.iter().map(|s| s.tags.clone()).collect();
    Ok(EvalReport {
        tagset: gold.tagset.clone(),
        word_tags: word_f1(&gold_tags, pred, &gold.tagset)?,
        phrase_classes: phrase_f1(&gold_tags, pred, &gold.tagset)?,
    })
}

/// Verifies that two corpora carry bit-identical token columns, as
/// required before scoring a prediction file against gold.
pub fn check_tokens_match(gold: &Corpus, pred: &Corpus) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCountMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (index, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::ShapeMismatch {
                sentence: index,
                gold: g.len(),
                pred: p.len(),
            });
        }
        for (offset, (gt, pt)) in g.tokens.iter().zip(&p.tokens).enumerate() {
            if gt != pt {
                return Err(EvalError::TokenMismatch {
                    line: gold.sentence_lines[index] + offset,
                    gold: gt.clone(),
                    pred: pt.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Text table layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    /// Word-level row per `B-`/`I-` tag plus the phrase row per class.
    PerTag,
    /// One phrase-level column per class plus a total.
    PerClass,
    /// Micro totals only.
    Summary,
}

impl ReportStyle {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "per-tag" => Some(Self::PerTag),
            "per-class" => Some(Self::PerClass),
            "summary" => Some(Self::Summary),
            _ => None,
        }
    }
}

impl fmt::Display for ReportStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PerTag => write!(f, "per-tag"),
            Self::PerClass => write!(f, "per-class"),
            Self::Summary => write!(f, "summary"),
        }
    }
}

/// Percent with two decimals, round half up: `2/3 -> "66.67"`.
fn percent(value: f64) -> String {
    let scaled = (value * 10000.0 + 0.5).floor() / 100.0;
    format!("{scaled:.2}")
}

/// Class indices sorted by class name, the column order of the report
/// tables.
fn sorted_classes(tagset: &Tagset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tagset.classes().len()).collect();
    order.sort_by(|&a, &b| tagset.classes()[a].cmp(&tagset.classes()[b]));
    order
}

/// Renders the report as a text table in the requested style. Ratios
/// are percentages with two decimals; see [`render_metrics`] for the
/// full-precision machine output.
pub fn render_report(report: &EvalReport, style: ReportStyle) -> String {
    let tagset = &report.tagset;
    let order = sorted_classes(tagset);
    let mut out = String::new();
    match style {
        ReportStyle::PerTag => {
            out.push_str("word-f1 (per tag)\n");
            let mut header = String::from("tag");
            let mut values = String::from("f1");
            for &class in &order {
                for tag in [tagset.begin(class), tagset.inside(class)] {
                    header.push('\t');
                    header.push_str(tagset.label_name(tag));
                    values.push('\t');
                    values.push_str(&percent(report.word_tags[tag.as_usize() - 1].f1()));
                }
            }
            header.push_str("\tall classes\n");
            values.push('\t');
            values.push_str(&percent(report.word_total().f1()));
            values.push('\n');
            out.push_str(&header);
            out.push_str(&values);
            out.push('\n');
            out.push_str("phrase-f1 (per class)\n");
            let mut header = String::from("class");
            let mut values = String::from("f1");
            for &class in &order {
                header.push('\t');
                header.push_str(&tagset.classes()[class]);
                values.push('\t');
                values.push_str(&percent(report.phrase_classes[class].f1()));
            }
            header.push_str("\tall classes\n");
            values.push('\t');
            values.push_str(&percent(report.phrase_total().f1()));
            values.push('\n');
            out.push_str(&header);
            out.push_str(&values);
        }
        ReportStyle::PerClass => {
            out.push_str("phrase-level evaluation\n");
            let mut header = String::from("class");
            let mut values = String::from("f1");
            for &class in &order {
                header.push('\t');
                header.push_str(&tagset.classes()[class]);
                values.push('\t');
                values.push_str(&percent(report.phrase_classes[class].f1()));
            }
            header.push_str("\tTotal F1\n");
            values.push('\t');
            values.push_str(&percent(report.phrase_total().f1()));
            values.push('\n');
            out.push_str(&header);
            out.push_str(&values);
        }
        ReportStyle::Summary => {
            out.push_str("level\tprecision\trecall\tf1\n");
            for (level, counts) in [
                ("word", report.word_total()),
                ("phrase", report.phrase_total()),
            ] {
                out.push_str(level);
                out.push('\t');
                out.push_str(&percent(counts.precision()));
                out.push('\t');
                out.push_str(&percent(counts.recall()));
                out.push('\t');
                out.push_str(&percent(counts.f1()));
                out.push('\n');
            }
        }
    }
    out
}

fn push_metric_group(out: &mut String, prefix: &str, counts: &PrCounts) {
    use std::fmt::Write;
    writeln!(out, "{prefix}.tp={}", counts.tp).unwrap();
    writeln!(out, "{prefix}.pred={}", counts.pred).unwrap();
    writeln!(out, "{prefix}.gold={}", counts.gold).unwrap();
    writeln!(out, "{prefix}.precision={}", counts.precision()).unwrap();
    if !counts.precision_defined() {
        writeln!(out, "{prefix}.precision.undefined=1").unwrap();
    }
    writeln!(out, "{prefix}.recall={}", counts.recall()).unwrap();
    if !counts.recall_defined() {
        writeln!(out, "{prefix}.recall.undefined=1").unwrap();
    }
    writeln!(out, "{prefix}.f1={}", counts.f1()).unwrap();
    if !counts.f1_defined() {
        writeln!(out, "{prefix}.f1.undefined=1").unwrap();
    }
}

/// Flat `key=value` metrics with full-precision ratios and the backing
/// counts; keys look like `phrase.Person.f1`. Zero-denominator ratios
/// carry an extra `<key>.undefined=1` marker.
pub fn render_metrics(report: &EvalReport) -> String {
    let tagset = &report.tagset;
    let mut out = String::new();
    for (class, name) in tagset.classes().iter().enumerate() {
        for tag in [tagset.begin(class), tagset.inside(class)] {
            push_metric_group(
                &mut out,
                &format!("word.{}", tagset.label_name(tag)),
                &report.word_tags[tag.as_usize() - 1],
            );
        }
        push_metric_group(
            &mut out,
            &format!("phrase.{name}"),
            &report.phrase_classes[class],
        );
    }
    push_metric_group(&mut out, "word.total", &report.word_total());
    push_metric_group(&mut out, "phrase.total", &report.phrase_total());
    out
}

/// Rebuilds a report from [`render_metrics`] output. Ratios are
/// recomputed from the counts; class order follows first appearance.
pub fn parse_metrics(text: &str) -> Result<EvalReport, EvalError> {
    let mut classes: Vec<String> = Vec::new();
    let mut entries: Vec<(String, String, u64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| EvalError::BadMetrics(format!("line {}: missing '='", idx + 1)))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 3 || !matches!(parts[2], "tp" | "pred" | "gold") {
            continue;
        }
        let count: u64 = value
            .parse()
            .map_err(|_| EvalError::BadMetrics(format!("line {}: bad count {value:?}", idx + 1)))?;
        if parts[1] != "total" {
            let class = match parts[0] {
                "phrase" => Some(parts[1].to_string()),
                "word" => parts[1]
                    .strip_prefix("B-")
                    .or_else(|| parts[1].strip_prefix("I-"))
                    .map(str::to_string),
                _ => None,
            };
            if let Some(class) = class {
                if !classes.contains(&class) {
                    classes.push(class);
                }
            }
        }
        entries.push((parts[0].to_string(), parts[1].to_string(), count));
        let _ = parts[2];
    }
    if classes.is_empty() {
        return Err(EvalError::BadMetrics("no per-class counts found".into()));
    }
    let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
    let tagset = Tagset::new("metrics", &class_refs)
        .map_err(|e| EvalError::BadMetrics(e.to_string()))?;
    let mut report = EvalReport {
        word_tags: vec![PrCounts::default(); tagset.label_count() - 1],
        phrase_classes: vec![PrCounts::default(); classes.len()],
        tagset,
    };

    // Re-walk the lines now that the tagset exists.
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 3 {
            continue;
        }
        let Ok(count) = value.parse::<u64>() else { continue };
        let slot = match (parts[0], parts[1]) {
            ("word", name) if name != "total" => report
                .tagset
                .label_of(name)
                .map(|id| &mut report.word_tags[id.as_usize() - 1]),
            ("phrase", name) if name != "total" => report
                .tagset
                .classes()
                .iter()
                .position(|c| c == name)
                .map(|class| &mut report.phrase_classes[class]),
            _ => None,
        };
        if let Some(counts) = slot {
            match parts[2] {
                "tp" => counts.tp = count,
                "pred" => counts.pred = count,
                "gold" => counts.gold = count,
                _ => {}
            }
        }
    }
    Ok(report)
}
