//! Linear-chain CRF head: projection to emission scores, exact
//! log-partition and posterior marginals via forward-backward, Viterbi
//! decoding, and analytic NLL gradients.
//!
//! The chain runs over the *unmasked* positions of an emission matrix
//! only; masked positions (`X` continuations, specials, padding) are
//! skipped entirely, so transition statistics are learned purely over
//! real label bigrams. All recursions work in log space with max
//! subtraction.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::corpus::Tagset;
use crate::rng;

/// Additive penalty standing in for minus infinity in constrained
/// transitions; keeps every tensor finite.
pub const CONSTRAINT_PENALTY: f64 = -1e30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrfError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("no unmasked position in the chain")]
    EmptyChain,
    #[error("label {label} out of range for {count} labels")]
    LabelOutOfRange { label: usize, count: usize },
}

/// Fully-connected projection from representations to emission scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `d_model x L`.
    pub weight: Array2<f64>,
    /// `1 x L`.
    pub bias: Array2<f64>,
}

impl Projection {
    /// Seeded init: weights normal with std `1/sqrt(d_model)`, bias zero.
    pub fn init(d_model: usize, label_count: usize, seed: u64) -> Self {
        let mut generator = rng::seeded(rng::derive_seed(&[seed, 0x7072_6f6a]));
        let std = 1.0 / (d_model as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((d_model, label_count), |_| {
                let z: f64 = generator.sample(StandardNormal);
                z * std
            }),
            bias: Array2::zeros((1, label_count)),
        }
    }

    pub fn label_count(&self) -> usize {
        self.weight.ncols()
    }
}

/// Per-position emission scores plus the supervision mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    /// `seq_len x L`.
    pub scores: Array2<f64>,
    /// True where the chain applies; false at `X`/special/pad positions.
    pub label_mask: Vec<bool>,
}

impl EmissionMatrix {
    pub fn seq_len(&self) -> usize {
        self.scores.nrows()
    }

    pub fn label_count(&self) -> usize {
        self.scores.ncols()
    }

    fn chain_positions(&self) -> Vec<usize> {
        self.label_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Label-to-label transition scores plus start/stop boundary scores.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    /// `trans[[i, j]]` scores moving from label `i` to label `j`.
    pub trans: Array2<f64>,
    /// `1 x L` score of starting the chain at each label.
    pub start: Array2<f64>,
    /// `1 x L` score of ending the chain at each label.
    pub stop: Array2<f64>,
}

impl TransitionMatrix {
    /// Neutral prior: everything zero.
    pub fn zeros(label_count: usize) -> Self {
        Self {
            trans: Array2::zeros((label_count, label_count)),
            start: Array2::zeros((1, label_count)),
            stop: Array2::zeros((1, label_count)),
        }
    }

    /// Adds hard BIO constraints: `O -> I-c` and `B-c -> I-c'` (for
    /// `c' != c`) are penalized by [`CONSTRAINT_PENALTY`]. The matrix
    /// stays finite.
    pub fn apply_bio_constraints(&mut self, tagset: &Tagset) {
        let outside = 0usize;
        for class in 0..tagset.classes().len() {
            let inside = tagset.inside(class).as_usize();
            self.trans[[outside, inside]] += CONSTRAINT_PENALTY;
            for other in 0..tagset.classes().len() {
                if other != class {
                    let begin_other = tagset.begin(other).as_usize();
                    self.trans[[begin_other, inside]] += CONSTRAINT_PENALTY;
                }
            }
        }
    }

    pub fn label_count(&self) -> usize {
        self.trans.nrows()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Projects representations to emission scores: `scores = R W + b`.
pub fn emissions(
    representations: &Array2<f64>,
    projection: &Projection,
    label_mask: &[bool],
) -> Result<EmissionMatrix, CrfError> {
    if representations.ncols() != projection.weight.nrows() {
        return Err(CrfError::ShapeMismatch {
            expected: format!("representation width {}", projection.weight.nrows()),
            got: format!("{}", representations.ncols()),
        });
    }
    if label_mask.len() != representations.nrows() {
        return Err(CrfError::ShapeMismatch {
            expected: format!("mask length {}", representations.nrows()),
            got: format!("{}", label_mask.len()),
        });
    }
    Ok(EmissionMatrix {
        scores: representations.dot(&projection.weight) + &projection.bias,
        label_mask: label_mask.to_vec(),
    })
}

fn checked_chain(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
) -> Result<Vec<usize>, CrfError> {
    if transitions.label_count() != emissions.label_count() {
        return Err(CrfError::ShapeMismatch {
            expected: format!("{} labels", emissions.label_count()),
            got: format!("{} labels", transitions.label_count()),
        });
    }
    let positions = emissions.chain_positions();
    if positions.is_empty() {
        return Err(CrfError::EmptyChain);
    }
    Ok(positions)
}

fn check_labels(labels: &[usize], expected: usize, label_count: usize) -> Result<(), CrfError> {
    if labels.len() != expected {
        return Err(CrfError::ShapeMismatch {
            expected: format!("{expected} labels (one per unmasked position)"),
            got: format!("{}", labels.len()),
        });
    }
    for &label in labels {
        if label >= label_count {
            return Err(CrfError::LabelOutOfRange {
                label,
                count: label_count,
            });
        }
    }
    Ok(())
}

/// Score of one label path over the unmasked positions:
/// `start + sum emissions + sum transitions + stop`.
pub fn path_score(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
    labels: &[usize],
) -> Result<f64, CrfError> {
    let positions = checked_chain(emissions, transitions)?;
    check_labels(labels, positions.len(), emissions.label_count())?;
    let mut score = transitions.start[[0, labels[0]]];
    for (step, (&position, &label)) in positions.iter().zip(labels).enumerate() {
        score += emissions.scores[[position, label]];
        if step + 1 < labels.len() {
            score += transitions.trans[[label, labels[step + 1]]];
        }
    }
    score += transitions.stop[[0, *labels.last().expect("nonempty chain")]];
    Ok(score)
}

fn forward_scores(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
    positions: &[usize],
) -> Array2<f64> {
    let label_count = emissions.label_count();
    let mut alpha = Array2::zeros((positions.len(), label_count));
    for label in 0..label_count {
        alpha[[0, label]] =
            transitions.start[[0, label]] + emissions.scores[[positions[0], label]];
    }
    for step in 1..positions.len() {
        for label in 0..label_count {
            let prior = log_sum_exp(
                (0..label_count)
                    .map(|prev| alpha[[step - 1, prev]] + transitions.trans[[prev, label]]),
            );
            alpha[[step, label]] = prior + emissions.scores[[positions[step], label]];
        }
    }
    alpha
}

fn backward_scores(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
    positions: &[usize],
) -> Array2<f64> {
    let label_count = emissions.label_count();
    let steps = positions.len();
    let mut beta = Array2::zeros((steps, label_count));
    for label in 0..label_count {
        beta[[steps - 1, label]] = transitions.stop[[0, label]];
    }
    for step in (0..steps - 1).rev() {
        for label in 0..label_count {
            beta[[step, label]] = log_sum_exp((0..label_count).map(|next| {
                transitions.trans[[label, next]]
                    + emissions.scores[[positions[step + 1], next]]
                    + beta[[step + 1, next]]
            }));
        }
    }
    beta
}

/// Log of the summed exponentiated scores over all label paths.
pub fn log_partition(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
) -> Result<f64, CrfError> {
    let positions = checked_chain(emissions, transitions)?;
    let alpha = forward_scores(emissions, transitions, &positions);
    let last = positions.len() - 1;
    Ok(log_sum_exp(
        (0..emissions.label_count()).map(|label| alpha[[last, label]] + transitions.stop[[0, label]]),
    ))
}

/// Highest-scoring label path over the unmasked positions and its score.
///
/// Ties are broken toward the lower label id at each backtracking step,
/// starting from the final label.
pub fn viterbi(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
) -> Result<(Vec<usize>, f64), CrfError> {
    let positions = checked_chain(emissions, transitions)?;
    let label_count = emissions.label_count();
    let steps = positions.len();

    let mut delta = Array2::zeros((steps, label_count));
    let mut backpointer = vec![vec![0usize; label_count]; steps];
    for label in 0..label_count {
        delta[[0, label]] =
            transitions.start[[0, label]] + emissions.scores[[positions[0], label]];
    }
    for step in 1..steps {
        for label in 0..label_count {
            let mut best_prev = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for prev in 0..label_count {
                let score = delta[[step - 1, prev]] + transitions.trans[[prev, label]];
                if score > best_score {
                    best_score = score;
                    best_prev = prev;
                }
            }
            delta[[step, label]] = best_score + emissions.scores[[positions[step], label]];
            backpointer[step][label] = best_prev;
        }
    }

    let mut best_label = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for label in 0..label_count {
        let score = delta[[steps - 1, label]] + transitions.stop[[0, label]];
        if score > best_score {
            best_score = score;
            best_label = label;
        }
    }
    let mut path = vec![best_label; steps];
    for step in (1..steps).rev() {
        path[step - 1] = backpointer[step][path[step]];
    }
    Ok((path, best_score))
}

/// Posterior label probability per position; masked rows are all zero.
pub fn marginals(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
) -> Result<Array2<f64>, CrfError> {
    let positions = checked_chain(emissions, transitions)?;
    let alpha = forward_scores(emissions, transitions, &positions);
    let beta = backward_scores(emissions, transitions, &positions);
    let last = positions.len() - 1;
    let log_z = log_sum_exp(
        (0..emissions.label_count()).map(|label| alpha[[last, label]] + transitions.stop[[0, label]]),
    );
    let mut posterior = Array2::zeros((emissions.seq_len(), emissions.label_count()));
    for (step, &position) in positions.iter().enumerate() {
        for label in 0..emissions.label_count() {
            posterior[[position, label]] = (alpha[[step, label]] + beta[[step, label]] - log_z).exp();
        }
    }
    Ok(posterior)
}

/// Loss and exact gradients of the CRF negative log-likelihood.
#[derive(Debug, Clone)]
pub struct CrfGradients {
    /// `log_partition - path_score(gold)`, always non-negative.
    pub loss: f64,
    /// `seq_len x L`; zero rows at masked positions.
    pub grad_emissions: Array2<f64>,
    pub grad_trans: Array2<f64>,
    pub grad_start: Array2<f64>,
    pub grad_stop: Array2<f64>,
}

/// NLL of the gold path plus gradients: expected statistics under the
/// model minus observed statistics of the gold path.
pub fn nll_and_grads(
    emissions: &EmissionMatrix,
    transitions: &TransitionMatrix,
    gold_labels: &[usize],
) -> Result<CrfGradients, CrfError> {
    let positions = checked_chain(emissions, transitions)?;
    let label_count = emissions.label_count();
    check_labels(gold_labels, positions.len(), label_count)?;

    let alpha = forward_scores(emissions, transitions, &positions);
    let beta = backward_scores(emissions, transitions, &positions);
    let steps = positions.len();
    let log_z = log_sum_exp(
        (0..label_count).map(|label| alpha[[steps - 1, label]] + transitions.stop[[0, label]]),
    );
    let gold_score = path_score(emissions, transitions, gold_labels)?;

    let mut grad_emissions = Array2::zeros((emissions.seq_len(), label_count));
    for (step, &position) in positions.iter().enumerate() {
        for label in 0..label_count {
            grad_emissions[[position, label]] =
                (alpha[[step, label]] + beta[[step, label]] - log_z).exp();
        }
        grad_emissions[[position, gold_labels[step]]] -= 1.0;
    }

    let mut grad_trans = Array2::zeros((label_count, label_count));
    for step in 0..steps.saturating_sub(1) {
        for from in 0..label_count {
            for to in 0..label_count {
                grad_trans[[from, to]] += (alpha[[step, from]]
                    + transitions.trans[[from, to]]
                    + emissions.scores[[positions[step + 1], to]]
                    + beta[[step + 1, to]]
                    - log_z)
                    .exp();
            }
        }
        grad_trans[[gold_labels[step], gold_labels[step + 1]]] -= 1.0;
    }

    let mut grad_start = Array2::zeros((1, label_count));
    let mut grad_stop = Array2::zeros((1, label_count));
    for label in 0..label_count {
        grad_start[[0, label]] = (alpha[[0, label]] + beta[[0, label]] - log_z).exp();
        grad_stop[[0, label]] =
            (alpha[[steps - 1, label]] + beta[[steps - 1, label]] - log_z).exp();
    }
    grad_start[[0, gold_labels[0]]] -= 1.0;
    grad_stop[[0, gold_labels[steps - 1]]] -= 1.0;

    Ok(CrfGradients {
        loss: log_z - gold_score,
        grad_emissions,
        grad_trans,
        grad_start,
        grad_stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{Array2, Axis};
    use rand::Rng;

    fn unmasked(scores: Array2<f64>) -> EmissionMatrix {
        let label_mask = vec![true; scores.nrows()];
        EmissionMatrix { scores, label_mask }
    }

    fn random_instance(
        seed: u64,
        seq_len: usize,
        label_count: usize,
    ) -> (EmissionMatrix, TransitionMatrix) {
        let mut generator = rng::seeded(seed);
        let scores =
            Array2::from_shape_fn((seq_len, label_count), |_| generator.random_range(-2.0..2.0));
        let mut transitions = TransitionMatrix::zeros(label_count);
        transitions.trans =
            Array2::from_shape_fn((label_count, label_count), |_| generator.random_range(-2.0..2.0));
        transitions.start =
            Array2::from_shape_fn((1, label_count), |_| generator.random_range(-2.0..2.0));
        transitions.stop =
            Array2::from_shape_fn((1, label_count), |_| generator.random_range(-2.0..2.0));
        (unmasked(scores), transitions)
    }

    /// Every label path over `steps` chain positions.
    fn all_paths(steps: usize, label_count: usize) -> Vec<Vec<usize>> {
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

    fn brute_log_partition(em: &EmissionMatrix, tr: &TransitionMatrix) -> f64 {
        let steps = em.label_mask.iter().filter(|&&m| m).count();
        log_sum_exp(
            all_paths(steps, em.label_count())
                .iter()
                .map(|path| path_score(em, tr, path).unwrap()),
        )
    }

    #[test]
    fn emissions_zero_weight_gives_bias_rows() {
        let projection = Projection {
            weight: Array2::zeros((3, 4)),
            bias: Array2::from_shape_fn((1, 4), |(_, j)| j as f64),
        };
        let repr = Array2::from_elem((2, 3), 5.0);
        let em = emissions(&repr, &projection, &[true, false]).unwrap();
        for row in em.scores.axis_iter(Axis(0)) {
            assert_eq!(row.to_vec(), vec![0.0, 1.0, 2.0, 3.0]);
        }
        assert_eq!(em.label_mask, vec![true, false]);
    }

    #[test]
    fn emissions_identity_passthrough() {
        let projection = Projection {
            weight: Array2::eye(1),
            bias: Array2::zeros((1, 1)),
        };
        let repr = Array2::from_shape_vec((3, 1), vec![0.5, -1.0, 2.0]).unwrap();
        let em = emissions(&repr, &projection, &[true; 3]).unwrap();
        assert_eq!(em.scores, repr);
    }

    #[test]
    fn emissions_match_hand_multiplication() {
        let mut generator = rng::seeded(11);
        let repr = Array2::from_shape_fn((3, 5), |_| generator.random_range(-1.0..1.0));
        let projection = Projection::init(5, 4, 11);
        let em = emissions(&repr, &projection, &[true; 3]).unwrap();
        // Independent triple loop.
        for i in 0..3 {
            for j in 0..4 {
                let mut expected = projection.bias[[0, j]];
                for k in 0..5 {
                    expected += repr[[i, k]] * projection.weight[[k, j]];
                }
                assert!((em.scores[[i, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn emissions_shape_checks() {
        let projection = Projection::init(5, 4, 0);
        let repr = Array2::zeros((3, 6));
        assert!(matches!(
            emissions(&repr, &projection, &[true; 3]),
            Err(CrfError::ShapeMismatch { .. })
        ));
        let repr = Array2::zeros((3, 5));
        assert!(matches!(
            emissions(&repr, &projection, &[true; 2]),
            Err(CrfError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn path_score_single_position() {
        let em = unmasked(Array2::from_shape_vec((1, 3), vec![0.3, -0.7, 1.1]).unwrap());
        let tr = TransitionMatrix::zeros(3);
        assert_eq!(path_score(&em, &tr, &[2]).unwrap(), 1.1);
    }

    #[test]
    fn path_score_all_zero_instance() {
        let em = unmasked(Array2::zeros((4, 3)));
        let tr = TransitionMatrix::zeros(3);
        for path in all_paths(4, 3) {
            assert_eq!(path_score(&em, &tr, &path).unwrap(), 0.0);
        }
    }

    #[test]
    fn path_score_matches_term_by_term_sum() {
        let (em, tr) = random_instance(21, 3, 3);
        let labels = [2usize, 0, 1];
        // Independent term-by-term accumulation.
        let expected = tr.start[[0, 2]]
            + em.scores[[0, 2]]
            + tr.trans[[2, 0]]
            + em.scores[[1, 0]]
            + tr.trans[[0, 1]]
            + em.scores[[2, 1]]
            + tr.stop[[0, 1]];
        assert!((path_score(&em, &tr, &labels).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn path_score_skips_masked_positions() {
        let mut em = unmasked(Array2::from_shape_vec(
            (3, 2),
            vec![1.0, 2.0, 100.0, 200.0, 3.0, 4.0],
        )
        .unwrap());
        em.label_mask[1] = false;
        let mut tr = TransitionMatrix::zeros(2);
        tr.trans[[0, 1]] = 0.5;
        // Chain is positions 0 and 2 only: start + e[0][0] + t[0->1] + e[2][1] + stop.
        assert_eq!(path_score(&em, &tr, &[0, 1]).unwrap(), 1.0 + 0.5 + 4.0);
    }

    #[test]
    fn path_score_errors() {
        let em = unmasked(Array2::zeros((2, 2)));
        let tr = TransitionMatrix::zeros(2);
        assert!(matches!(
            path_score(&em, &tr, &[0]),
            Err(CrfError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            path_score(&em, &tr, &[0, 5]),
            Err(CrfError::LabelOutOfRange { .. })
        ));
        let empty = EmissionMatrix {
            scores: Array2::zeros((2, 2)),
            label_mask: vec![false, false],
        };
        assert!(matches!(
            path_score(&empty, &tr, &[]),
            Err(CrfError::EmptyChain)
        ));
    }

    #[test]
    fn log_partition_of_zeros_is_log_label_count() {
        let em = unmasked(Array2::zeros((1, 2)));
        let tr = TransitionMatrix::zeros(2);
        assert!((log_partition(&em, &tr).unwrap() - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_partition_degenerate_single_label() {
        let (em, tr) = random_instance(5, 4, 1);
        let only_path = vec![0usize; 4];
        let score = path_score(&em, &tr, &only_path).unwrap();
        let log_z = log_partition(&em, &tr).unwrap();
        assert!((log_z - score).abs() < 1e-10);
        // Loss for the only possible path is zero with zero gradients.
        let grads = nll_and_grads(&em, &tr, &only_path).unwrap();
        assert!(grads.loss.abs() < 1e-10);
        assert!(grads.grad_emissions.iter().all(|v| v.abs() < 1e-12));
        assert!(grads.grad_trans.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let (em, tr) = random_instance(33, 4, 3);
        let brute = brute_log_partition(&em, &tr);
        assert!((log_partition(&em, &tr).unwrap() - brute).abs() < 1e-8);
    }

    #[test]
    fn log_space_forward_matches_naive_space() {
        let (em, tr) = random_instance(7, 4, 3);
        // Naive-space forward recursion on plain probabilities.
        let labels = em.label_count();
        let mut alpha = vec![0f64; labels];
        for (label, a) in alpha.iter_mut().enumerate() {
            *a = (tr.start[[0, label]] + em.scores[[0, label]]).exp();
        }
        for step in 1..4 {
            let mut next = vec![0f64; labels];
            for (label, n) in next.iter_mut().enumerate() {
                for (prev, &a) in alpha.iter().enumerate() {
                    *n += a * tr.trans[[prev, label]].exp();
                }
                *n *= em.scores[[step, label]].exp();
            }
            alpha = next;
        }
        let z_naive: f64 = alpha
            .iter()
            .enumerate()
            .map(|(label, a)| a * tr.stop[[0, label]].exp())
            .sum();
        assert!((log_partition(&em, &tr).unwrap() - z_naive.ln()).abs() < 1e-10);
    }

    #[test]
    fn viterbi_zero_transitions_is_per_position_argmax() {
        let scores = Array2::from_shape_vec(
            (3, 3),
            vec![0.1, 0.9, 0.2, 1.5, -1.0, 0.0, -3.0, -2.0, -1.0],
        )
        .unwrap();
        let em = unmasked(scores);
        let tr = TransitionMatrix::zeros(3);
        let (path, score) = viterbi(&em, &tr).unwrap();
        assert_eq!(path, vec![1, 0, 2]);
        assert!((score - (0.9 + 1.5 + -1.0)).abs() < 1e-12);
    }

    #[test]
    fn viterbi_all_equal_scores_picks_lowest_ids() {
        let em = unmasked(Array2::zeros((4, 3)));
        let tr = TransitionMatrix::zeros(3);
        let (path, score) = viterbi(&em, &tr).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let (em, tr) = random_instance(55, 5, 4);
        let paths = all_paths(5, 4);
        let mut best = f64::NEG_INFINITY;
        for path in &paths {
            best = best.max(path_score(&em, &tr, path).unwrap());
        }
        let (path, score) = viterbi(&em, &tr).unwrap();
        assert!((score - best).abs() < 1e-10);
        assert!((path_score(&em, &tr, &path).unwrap() - score).abs() < 1e-10);
    }

    #[test]
    fn marginals_symmetric_instance() {
        let em = unmasked(Array2::zeros((1, 2)));
        let tr = TransitionMatrix::zeros(2);
        let m = marginals(&em, &tr).unwrap();
        assert!((m[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((m[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn marginals_saturate_to_point_mass() {
        let scores = Array2::from_shape_vec((2, 3), vec![-1000.0, 1000.0, -1000.0, -1000.0, 1000.0, -1000.0]).unwrap();
        let em = unmasked(scores);
        let tr = TransitionMatrix::zeros(3);
        let m = marginals(&em, &tr).unwrap();
        for position in 0..2 {
            assert!((m[[position, 1]] - 1.0).abs() < 1e-12);
            assert!(m[[position, 0]].abs() < 1e-12);
            assert!(m[[position, 2]].abs() < 1e-12);
        }
    }

    #[test]
    fn marginals_match_enumeration_and_sum_to_one() {
        let (em, tr) = random_instance(77, 3, 3);
        let log_z = brute_log_partition(&em, &tr);
        let mut brute = Array2::<f64>::zeros((3, 3));
        for path in all_paths(3, 3) {
            let weight = (path_score(&em, &tr, &path).unwrap() - log_z).exp();
            for (step, &label) in path.iter().enumerate() {
                brute[[step, label]] += weight;
            }
        }
        let m = marginals(&em, &tr).unwrap();
        for i in 0..3 {
            let mut row_sum = 0.0;
            for j in 0..3 {
                assert!((m[[i, j]] - brute[[i, j]]).abs() < 1e-8);
                row_sum += m[[i, j]];
            }
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn marginals_zero_at_masked_rows() {
        let mut em = unmasked(Array2::ones((3, 2)));
        em.label_mask[1] = false;
        let tr = TransitionMatrix::zeros(2);
        let m = marginals(&em, &tr).unwrap();
        assert!(m.row(1).iter().all(|&v| v == 0.0));
        assert!((m.row(0).sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nll_loss_nonnegative_and_emission_grad_rows_sum_to_zero() {
        let (em, tr) = random_instance(91, 4, 3);
        let grads = nll_and_grads(&em, &tr, &[1, 0, 2, 2]).unwrap();
        assert!(grads.loss >= 0.0);
        for row in grads.grad_emissions.axis_iter(Axis(0)) {
            assert!(row.sum().abs() < 1e-9);
        }
        // Start/stop gradients are probabilities minus a one-hot.
        assert!(grads.grad_start.sum().abs() < 1e-9);
        assert!(grads.grad_stop.sum().abs() < 1e-9);
    }

    #[test]
    fn log_partition_dominates_every_path() {
        let (em, tr) = random_instance(13, 4, 3);
        let log_z = log_partition(&em, &tr).unwrap();
        for path in all_paths(4, 3) {
            assert!(log_z >= path_score(&em, &tr, &path).unwrap());
        }
    }

    #[test]
    fn emission_shift_moves_scores_by_constant() {
        let (em, tr) = random_instance(17, 4, 3);
        let shift = 1.75;
        let mut shifted = em.clone();
        for label in 0..3 {
            shifted.scores[[2, label]] += shift;
        }
        let base_z = log_partition(&em, &tr).unwrap();
        let shifted_z = log_partition(&shifted, &tr).unwrap();
        assert!((shifted_z - base_z - shift).abs() < 1e-9);
        let path = [0usize, 1, 2, 0];
        let base_score = path_score(&em, &tr, &path).unwrap();
        let shifted_score = path_score(&shifted, &tr, &path).unwrap();
        assert!((shifted_score - base_score - shift).abs() < 1e-12);
        let (base_path, _) = viterbi(&em, &tr).unwrap();
        let (shifted_path, _) = viterbi(&shifted, &tr).unwrap();
        assert_eq!(base_path, shifted_path);
    }

    #[test]
    fn bio_constraints_forbid_listed_transitions() {
        let tagset = Tagset::new("t", &["PER", "LOC"]).unwrap();
        let mut tr = TransitionMatrix::zeros(tagset.extended_label_count());
        tr.apply_bio_constraints(&tagset);
        let outside = 0;
        let b_per = tagset.begin(0).as_usize();
        let i_per = tagset.inside(0).as_usize();
        let i_loc = tagset.inside(1).as_usize();
        assert_eq!(tr.trans[[outside, i_per]], CONSTRAINT_PENALTY);
        assert_eq!(tr.trans[[outside, i_loc]], CONSTRAINT_PENALTY);
        assert_eq!(tr.trans[[b_per, i_loc]], CONSTRAINT_PENALTY);
        assert_eq!(tr.trans[[b_per, i_per]], 0.0);
        assert!(tr.trans.iter().all(|v| v.is_finite()));

        // A constrained decode never emits the forbidden bigram.
        let mut generator = rng::seeded(3);
        let scores = Array2::from_shape_fn((5, tagset.extended_label_count()), |_| {
            generator.random_range(-3.0..3.0)
        });
        let em = unmasked(scores);
        let (path, _) = viterbi(&em, &tr).unwrap();
        for pair in path.windows(2) {
            assert!(
                !(pair[0] == outside && pair[1] == i_per)
                    && !(pair[0] == outside && pair[1] == i_loc)
                    && !(pair[0] == b_per && pair[1] == i_loc)
            );
        }
    }
}
