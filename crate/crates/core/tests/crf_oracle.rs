//! CRF dynamic programs against brute-force path enumeration.

mod common;

use common::{brute_log_partition, brute_marginals, brute_viterbi, random_crf_instance};
use ndarray::Array2;
use proptest::prelude::*;

use seqtag_core::crf::{log_partition, marginals, viterbi, EmissionMatrix, TransitionMatrix};

#[test]
fn dynamic_programs_match_enumeration_across_shapes() {
    let mut instances = 0;
    for seq_len in 1..=6usize {
        for label_count in 1..=5usize {
            for rep in 0..4u64 {
                let seed = (seq_len as u64) << 24 | (label_count as u64) << 16 | rep;
                let with_mask = rep % 2 == 1 && seq_len > 1;
                let (em, tr) = random_crf_instance(seed, seq_len, label_count, with_mask);

                let log_z = log_partition(&em, &tr).unwrap();
                assert!(
                    (log_z - brute_log_partition(&em, &tr)).abs() < 1e-8,
                    "log partition mismatch at seed {seed}"
                );

                let (path, score) = viterbi(&em, &tr).unwrap();
                let (oracle_path, oracle_score) = brute_viterbi(&em, &tr);
                assert!((score - oracle_score).abs() < 1e-10, "viterbi score at seed {seed}");
                assert_eq!(path, oracle_path, "viterbi path at seed {seed}");

                let posterior = marginals(&em, &tr).unwrap();
                let oracle_posterior = brute_marginals(&em, &tr);
                for (a, b) in posterior.iter().zip(oracle_posterior.iter()) {
                    assert!((a - b).abs() < 1e-8, "marginal mismatch at seed {seed}");
                }
                instances += 1;
            }
        }
    }
    assert_eq!(instances, 6 * 5 * 4);
}

proptest! {
    // Integer-valued scores force exact score ties, exercising the
    // lower-id tie rule against the enumeration oracle.
    #[test]
    fn viterbi_tie_rule_matches_oracle_on_discrete_scores(
        seq_len in 1usize..5,
        label_count in 2usize..4,
        raw in proptest::collection::vec(-1i8..=1, 0..60),
    ) {
        let need = seq_len * label_count + label_count * label_count + 2 * label_count;
        prop_assume!(raw.len() >= need);
        let mut values = raw.into_iter().map(|v| v as f64);
        let scores = Array2::from_shape_fn((seq_len, label_count), |_| values.next().unwrap());
        let em = EmissionMatrix { scores, label_mask: vec![true; seq_len] };
        let mut tr = TransitionMatrix::zeros(label_count);
        tr.trans = Array2::from_shape_fn((label_count, label_count), |_| values.next().unwrap());
        tr.start = Array2::from_shape_fn((1, label_count), |_| values.next().unwrap());
        tr.stop = Array2::from_shape_fn((1, label_count), |_| values.next().unwrap());

        let (path, score) = viterbi(&em, &tr).unwrap();
        let (oracle_path, oracle_score) = brute_viterbi(&em, &tr);
        prop_assert_eq!(score, oracle_score);
        prop_assert_eq!(path, oracle_path);
    }

    #[test]
    fn marginal_rows_sum_to_one(seed in 0u64..500, seq_len in 1usize..6, label_count in 1usize..5) {
        let (em, tr) = random_crf_instance(seed, seq_len, label_count, true);
        let posterior = marginals(&em, &tr).unwrap();
        for (row, &live) in posterior.outer_iter().zip(&em.label_mask) {
            if live {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}
