//! Shared helpers for the integration suites: brute-force CRF oracles
//! and a deterministic synthetic entity corpus.

#![allow(dead_code)]

pub mod grad;

use ndarray::Array2;
use rand::Rng;

use seqtag_core::corpus::{Corpus, LabelId, TaggedSentence, Tagset};
use seqtag_core::crf::{path_score, EmissionMatrix, TransitionMatrix};
use seqtag_core::rng;
use seqtag_core::tokenizer::{train_bpe, word_counts, MergeTable};

/// Every label path over `steps` chain positions, in lexicographic order.
pub fn all_paths(steps: usize, label_count: usize) -> Vec<Vec<usize>> {
    let total = label_count.pow(steps as u32);
    (0..total)
        .map(|mut index| {
            let mut path = vec![0usize; steps];
            for slot in (0..steps).rev() {
                path[slot] = index % label_count;
                index /= label_count;
            }
            path
        })
        .collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-partition by full path enumeration.
pub fn brute_log_partition(em: &EmissionMatrix, tr: &TransitionMatrix) -> f64 {
    let steps = em.label_mask.iter().filter(|&&m| m).count();
    let scores: Vec<f64> = all_paths(steps, em.label_count())
        .iter()
        .map(|path| path_score(em, tr, path).expect("oracle path score"))
        .collect();
    log_sum_exp(&scores)
}

/// Max-score path by enumeration, replicating the decoder's tie rule:
/// among maximal paths, the one whose *reversed* sequence is
/// lexicographically smallest (the backtracking pass fixes the last
/// label first, preferring lower ids at every step).
pub fn brute_viterbi(em: &EmissionMatrix, tr: &TransitionMatrix) -> (Vec<usize>, f64) {
    let steps = em.label_mask.iter().filter(|&&m| m).count();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_paths: Vec<Vec<usize>> = Vec::new();
    for path in all_paths(steps, em.label_count()) {
        let score = path_score(em, tr, &path).expect("oracle path score");
        if score > best_score {
            best_score = score;
            best_paths = vec![path];
        } else if score == best_score {
            best_paths.push(path);
        }
    }
    let winner = best_paths
        .into_iter()
        .min_by(|a, b| {
            a.iter()
                .rev()
                .cmp(b.iter().rev())
        })
        .expect("at least one path");
    (winner, best_score)
}

/// Posterior marginals by enumeration, over the full emission rows
/// (zeros at masked rows).
pub fn brute_marginals(em: &EmissionMatrix, tr: &TransitionMatrix) -> Array2<f64> {
    let positions: Vec<usize> = em
        .label_mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    let log_z = brute_log_partition(em, tr);
    let mut posterior = Array2::zeros((em.seq_len(), em.label_count()));
    for path in all_paths(positions.len(), em.label_count()) {
        let weight = (path_score(em, tr, &path).expect("oracle path score") - log_z).exp();
        for (step, &label) in path.iter().enumerate() {
            posterior[[positions[step], label]] += weight;
        }
    }
    posterior
}

/// A random CRF instance. With `with_mask`, roughly a third of the
/// positions are masked (at least one stays live).
pub fn random_crf_instance(
    seed: u64,
    seq_len: usize,
    label_count: usize,
    with_mask: bool,
) -> (EmissionMatrix, TransitionMatrix) {
    let mut generator = rng::seeded(seed);
    let scores =
        Array2::from_shape_fn((seq_len, label_count), |_| generator.random_range(-3.0..3.0));
    let mut label_mask = vec![true; seq_len];
    if with_mask {
        for live in label_mask.iter_mut() {
            if generator.random_range(0..3) == 0 {
                *live = false;
            }
        }
        if label_mask.iter().all(|&m| !m) {
            label_mask[generator.random_range(0..seq_len)] = true;
        }
    }
    let mut transitions = TransitionMatrix::zeros(label_count);
    transitions.trans =
        Array2::from_shape_fn((label_count, label_count), |_| generator.random_range(-3.0..3.0));
    transitions.start =
        Array2::from_shape_fn((1, label_count), |_| generator.random_range(-3.0..3.0));
    transitions.stop =
        Array2::from_shape_fn((1, label_count), |_| generator.random_range(-3.0..3.0));
    (EmissionMatrix { scores, label_mask }, transitions)
}

const FIRST_NAMES: [&str; 4] = ["anna", "omid", "sara", "reza"];
const SURNAMES: [&str; 2] = ["karimi", "moradi"];
const PLACES: [&str; 4] = ["tehran", "shiraz", "yazd", "tabriz"];

/// Deterministic two-class corpus where every word type has exactly one
/// tag: first names are `B-PER`, surnames `I-PER`, known places `B-LOC`
/// (with one fixed two-token place), everything else `O`. Any model that
/// memorizes word identities can label it perfectly.
///
/// Templates and vocabulary slots cycle with short periods, so every
/// word type and template appears densely in any window of two dozen
/// sentences; the seed only shifts the phase. This keeps train/dev/test
/// splits of the same corpus lexically covered by each other.
pub fn synthetic_entity_corpus(n_sentences: usize, seed: u64) -> Corpus {
    let tagset = Tagset::new("synth", &["PER", "LOC"]).unwrap();
    let b_per = tagset.begin(0);
    let i_per = tagset.inside(0);
    let b_loc = tagset.begin(1);
    let i_loc = tagset.inside(1);
    let o = LabelId::OUTSIDE;

    let phase = rng::derive_seed(&[seed, 0x5f5f_5359_4e54_4800u64]) as usize;
    let mut sentences = Vec::with_capacity(n_sentences);
    for i in 0..n_sentences {
        let j = phase.wrapping_add(i);
        let first = FIRST_NAMES[j % FIRST_NAMES.len()];
        let last = SURNAMES[(j / 4) % SURNAMES.len()];
        let place = PLACES[(j / 2) % PLACES.len()];
        let (tokens, tags): (Vec<&str>, Vec<LabelId>) = match j % 6 {
            0 => (
                vec![first, last, "went", "to", place, "."],
                vec![b_per, i_per, o, o, b_loc, o],
            ),
            1 => (
                vec!["the", "clerk", "saw", first, last, "in", place],
                vec![o, o, o, b_per, i_per, o, b_loc],
            ),
            2 => (
                vec![first, "signed", "the", "report", "."],
                vec![b_per, o, o, o, o],
            ),
            3 => (
                vec!["the", "report", "went", "to", place, "yesterday"],
                vec![o, o, o, o, b_loc, o],
            ),
            4 => (
                vec!["they", "went", "to", "bandar", "abbas", "again"],
                vec![o, o, o, b_loc, i_loc, o],
            ),
            _ => (
                vec!["the", "clerk", "signed", "the", "report"],
                vec![o, o, o, o, o],
            ),
        };
        sentences.push(
            TaggedSentence::new(tokens.iter().map(|t| t.to_string()).collect(), tags).unwrap(),
        );
    }
    Corpus::from_sentences(tagset, sentences, "synthetic-entities").unwrap()
}

/// BPE table sized so fixture words split into a few subwords each.
pub fn fixture_merges(corpus: &Corpus) -> MergeTable {
    let counts = word_counts(corpus);
    let distinct_chars: std::collections::BTreeSet<char> =
        counts.keys().flat_map(|w| w.chars()).collect();
    train_bpe(&counts, 4 + distinct_chars.len() + 24).unwrap()
}

/// Fixed Peyma-shaped report behind the golden files, including one
/// class with no predictions at all.
pub fn golden_report() -> seqtag_core::eval::EvalReport {
    use seqtag_core::eval::{EvalReport, PrCounts};
    // (tp, pred, gold) per B-c / I-c in storage order: Person,
    // Organization, Location, Date, Money, Percent, Time.
    let word = [
        (93, 100, 105),
        (94, 99, 101),
        (89, 101, 99),
        (90, 100, 98),
        (91, 99, 100),
        (82, 100, 99),
        (84, 99, 99),
        (88, 100, 99),
        (95, 99, 99),
        (97, 99, 100),
        (94, 99, 99),
        (97, 100, 100),
        (0, 0, 4),
        (0, 0, 2),
    ];
    let phrase = [
        (90, 99, 100),
        (84, 99, 99),
        (89, 99, 99),
        (80, 100, 99),
        (92, 99, 100),
        (93, 99, 99),
        (0, 0, 3),
    ];
    EvalReport {
        word_tags: word
            .iter()
            .map(|&(tp, pred, gold)| PrCounts { tp, pred, gold })
            .collect(),
        phrase_classes: phrase
            .iter()
            .map(|&(tp, pred, gold)| PrCounts { tp, pred, gold })
            .collect(),
        tagset: Tagset::peyma(),
    }
}
