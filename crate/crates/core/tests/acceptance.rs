//! Acceptance suite. Each test covers one criterion at its stated
//! tolerance and prints one pass line; a failed assertion marks the
//! criterion failed. Run with
//! `cargo test -p seqtag-core --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use common::grad::{check_crf_instance, check_encoder_instance};
use common::{
    brute_log_partition, brute_marginals, brute_viterbi, fixture_merges, golden_report,
    random_crf_instance, synthetic_entity_corpus,
};
use seqtag_core::corpus::{LabelId, Tagset};
use seqtag_core::crf::{log_partition, marginals, viterbi};
use seqtag_core::encoder::{EncoderConfig, ForwardMode};
use seqtag_core::eval::{
    evaluate_corpus, phrase_f1, render_metrics, render_report, word_f1, ReportStyle,
};
use seqtag_core::tokenizer::{align, project_to_words};
use seqtag_core::trainer::{cross_validation_plan, predict_corpus, train, TrainConfig};
use seqtag_core::{checkpoint, corpus::split_kfold};

#[test]
fn criterion_1_crf_oracle_equivalence() {
    let mut instances = 0usize;
    for seq_len in 1..=6usize {
        for label_count in 1..=5usize {
            for rep in 0..34u64 {
                let seed = (seq_len as u64) << 32 | (label_count as u64) << 24 | rep;
                let with_mask = rep % 2 == 1 && seq_len > 1;
                let (em, tr) = random_crf_instance(seed, seq_len, label_count, with_mask);

                let log_z = log_partition(&em, &tr).unwrap();
                let oracle_log_z = brute_log_partition(&em, &tr);
                assert!(
                    (log_z - oracle_log_z).abs() < 1e-8,
                    "log partition off by {} at seed {seed}",
                    (log_z - oracle_log_z).abs()
                );

                let (path, score) = viterbi(&em, &tr).unwrap();
                let (oracle_path, oracle_score) = brute_viterbi(&em, &tr);
                assert!(
                    (score - oracle_score).abs() < 1e-10,
                    "viterbi score off at seed {seed}"
                );
                assert_eq!(path, oracle_path, "viterbi path differs at seed {seed}");

                let posterior = marginals(&em, &tr).unwrap();
                let oracle_posterior = brute_marginals(&em, &tr);
                for (a, b) in posterior.iter().zip(oracle_posterior.iter()) {
                    assert!((a - b).abs() < 1e-8, "marginal off at seed {seed}");
                }
                instances += 1;
            }
        }
    }
    assert!(instances >= 1000, "only {instances} instances checked");
    println!("[PASS] criterion 1: CRF oracle equivalence over {instances} random instances");
}

#[test]
fn criterion_2_gradient_checks() {
    for seed in 0..10 {
        check_encoder_instance(seed, ForwardMode::Eval, 0.0);
    }
    for seed in 0..10 {
        check_crf_instance(seed);
    }
    println!(
        "[PASS] criterion 2: encoder (rel 1e-3) and CRF (rel 1e-4) gradients match \
         finite differences on 10 seeded instances each"
    );
}

#[test]
fn criterion_3_alignment_invariants() {
    let corpus = synthetic_entity_corpus(250, 21);
    let merges = fixture_merges(&corpus);
    let tagset = &corpus.tagset;
    let x = tagset.x_label();
    let mut checked = 0usize;
    for sentence in &corpus.sentences {
        let aligned = align(sentence, &merges, tagset, 128).unwrap();
        assert!(aligned.truncation.is_none());

        let x_count = aligned.labels.iter().filter(|&&l| l == x).count();
        let non_special = aligned.token_of.iter().filter(|t| t.is_some()).count();
        let specials = aligned.len() - non_special;
        // X labels: every non-first subword plus the specials.
        assert_eq!(x_count, non_special - sentence.len() + specials);

        let projected = project_to_words(&aligned, &aligned.labels, tagset).unwrap();
        assert_eq!(projected.tags, sentence.tags);
        assert_eq!(projected.coerced_x, 0);
        checked += 1;
    }
    assert_eq!(checked, corpus.len());
    println!(
        "[PASS] criterion 3: X-count invariant and project(align) round-trip hold for \
         {checked}/{checked} fixture sentences"
    );
}

#[test]
fn criterion_4_fold_arithmetic() {
    let tagset = Tagset::new("synth", &["A"]).unwrap();
    let sentences = (0..7145)
        .map(|i| {
            seqtag_core::corpus::TaggedSentence::new(vec![format!("w{i}")], vec![LabelId::OUTSIDE])
                .unwrap()
        })
        .collect();
    let corpus =
        seqtag_core::corpus::Corpus::from_sentences(tagset, sentences, "large-synthetic").unwrap();

    let split = split_kfold(&corpus, 5, 0).unwrap();
    assert_eq!(split.sizes(), vec![1429; 5]);

    let plans = cross_validation_plan(&corpus, 5, 0).unwrap();
    for plan in &plans {
        assert_eq!(plan.test.len(), 1429);
        assert_eq!(plan.train_pool.len(), 5716);
    }
    println!(
        "[PASS] criterion 4: k=5 on 7145 sentences gives five folds of 1429; each round \
         trains on 5716"
    );
}

#[test]
fn criterion_5_overfit_fixture() {
    let started = Instant::now();
    let train_corpus = synthetic_entity_corpus(200, 2024);
    let held_out = synthetic_entity_corpus(50, 7);
    let merges = fixture_merges(&train_corpus);
    let encoder_config = EncoderConfig::toy(merges.vocab_size());
    let config = TrainConfig::default(); // 200 epochs max, patience 5

    let checkpoint = train(&train_corpus, None, merges, encoder_config, &config).unwrap();
    let model = checkpoint.best_model();
    let predictions = predict_corpus(&model, &held_out, 1).unwrap();
    let report = evaluate_corpus(&held_out, &predictions).unwrap();
    let f1 = report.phrase_total().f1();
    let elapsed = started.elapsed();

    assert!(
        f1 >= 0.95,
        "held-out phrase F1 {f1} after {} epochs",
        checkpoint.epochs_done
    );
    assert!(
        elapsed.as_secs() < 600,
        "took {elapsed:?}, budget is 10 minutes"
    );
    println!(
        "[PASS] criterion 5: held-out phrase F1 {f1:.4} after {} epochs in {elapsed:.1?}",
        checkpoint.epochs_done
    );
}

#[test]
fn criterion_6_evaluator_conformance() {
    let tagset = Tagset::new("two", &["A", "B"]).unwrap();
    let labels: Vec<LabelId> = (0..tagset.label_count() as u16).map(LabelId).collect();

    // Independent oracle: spans are maximal same-class non-O runs,
    // split before every B- tag.
    let oracle_spans = |tags: &[LabelId]| -> Vec<(usize, usize, usize)> {
        let mut spans = Vec::new();
        let mut position = 0;
        while position < tags.len() {
            match tagset.class_of(tags[position]) {
                None => position += 1,
                Some(class) => {
                    let start = position;
                    let mut end = position + 1;
                    while end < tags.len()
                        && tagset.class_of(tags[end]) == Some(class)
                        && !tagset.is_begin(tags[end])
                    {
                        end += 1;
                    }
                    spans.push((class, start, end));
                    position = end;
                }
            }
        }
        spans
    };

    let mut sequences_by_len: Vec<Vec<Vec<LabelId>>> = Vec::new();
    for len in 1..=5usize {
        let mut sequences = Vec::with_capacity(labels.len().pow(len as u32));
        let total = labels.len().pow(len as u32);
        for mut index in 0..total {
            let mut tags = vec![LabelId(0); len];
            for slot in (0..len).rev() {
                tags[slot] = labels[index % labels.len()];
                index /= labels.len();
            }
            sequences.push(tags);
        }
        sequences_by_len.push(sequences);
    }

    let mut pairs = 0u64;
    for sequences in &sequences_by_len {
        let spans: Vec<Vec<(usize, usize, usize)>> =
            sequences.iter().map(|tags| oracle_spans(tags)).collect();
        for (gold_tags, gold_spans) in sequences.iter().zip(&spans) {
            let gold_slice = std::slice::from_ref(gold_tags);
            for (pred_tags, pred_spans) in sequences.iter().zip(&spans) {
                let counts =
                    phrase_f1(gold_slice, std::slice::from_ref(pred_tags), &tagset).unwrap();
                for (class, class_counts) in counts.iter().enumerate() {
                    let oracle_gold =
                        gold_spans.iter().filter(|s| s.0 == class).count() as u64;
                    let oracle_pred =
                        pred_spans.iter().filter(|s| s.0 == class).count() as u64;
                    let oracle_tp = pred_spans
                        .iter()
                        .filter(|s| s.0 == class && gold_spans.contains(s))
                        .count() as u64;
                    assert_eq!(
                        (class_counts.tp, class_counts.pred, class_counts.gold),
                        (oracle_tp, oracle_pred, oracle_gold),
                        "pair gold={gold_tags:?} pred={pred_tags:?} class={class}"
                    );
                }
                pairs += 1;
            }
        }
    }

    // Self-evaluation identity on the fixture corpus.
    let corpus = synthetic_entity_corpus(100, 5);
    let own_tags: Vec<Vec<LabelId>> = corpus.sentences.iter().map(|s| s.tags.clone()).collect();
    let report = evaluate_corpus(&corpus, &own_tags).unwrap();
    assert_eq!(report.word_total().f1(), 1.0);
    assert_eq!(report.phrase_total().f1(), 1.0);

    // Hand-computed micro example: gold [B-PER, I-PER], pred [B-PER, O].
    let two = Tagset::new("perloc", &["PER", "LOC"]).unwrap();
    let gold = vec![vec![two.begin(0), two.inside(0)]];
    let pred = vec![vec![two.begin(0), LabelId::OUTSIDE]];
    let tags = word_f1(&gold, &pred, &two).unwrap();
    let mut total = seqtag_core::eval::PrCounts::default();
    for counts in &tags {
        total.add(*counts);
    }
    assert_eq!(total.f1(), 2.0 / 3.0);

    println!(
        "[PASS] criterion 6: phrase counts match the span-intersection oracle on all \
         {pairs} tag-sequence pairs (len <= 5, 2 classes); self-eval F1 = 1; micro 2/3 exact"
    );
}

#[test]
fn criterion_7_reproducibility() {
    let corpus = synthetic_entity_corpus(30, 17);
    let eval_corpus = synthetic_entity_corpus(12, 40);
    let merges = fixture_merges(&corpus);
    let encoder_config = EncoderConfig {
        vocab_size: merges.vocab_size(),
        d_model: 32,
        n_heads: 4,
        n_layers: 1,
        d_ff: 64,
        max_len: 64,
        dropout_rate: 0.1,
        seed: 0,
    };
    let config = TrainConfig {
        epochs: 5,
        batch_size: 8,
        patience: 0,
        ..TrainConfig::default()
    };
    let run = || {
        let checkpoint = train(&corpus, None, merges.clone(), encoder_config, &config).unwrap();
        let model = checkpoint.best_model();
        let predictions = predict_corpus(&model, &eval_corpus, 1).unwrap();
        let report = evaluate_corpus(&eval_corpus, &predictions).unwrap();
        (checkpoint, render_metrics(&report))
    };
    let (checkpoint_a, report_a) = run();
    let (checkpoint_b, report_b) = run();

    let dir = tempfile::tempdir().unwrap();
    let path_a = dir.path().join("a.ckpt");
    let path_b = dir.path().join("b.ckpt");
    checkpoint::save(&checkpoint_a, &path_a).unwrap();
    checkpoint::save(&checkpoint_b, &path_b).unwrap();
    assert_eq!(
        std::fs::read(&path_a).unwrap(),
        std::fs::read(&path_b).unwrap(),
        "checkpoint bytes differ between identical runs"
    );
    assert_eq!(report_a, report_b, "rendered reports differ");
    println!(
        "[PASS] criterion 7: identical seeds give bit-identical checkpoints and reports"
    );
}

#[test]
fn criterion_8_report_fidelity() {
    let report = golden_report();
    for (style, file) in [
        (ReportStyle::PerTag, "tests/golden/report_per_tag.txt"),
        (ReportStyle::PerClass, "tests/golden/report_per_class.txt"),
        (ReportStyle::Summary, "tests/golden/report_summary.txt"),
    ] {
        let expected = std::fs::read_to_string(file).unwrap();
        let rendered = render_report(&report, style);
        assert_eq!(rendered, expected, "{style} report drifted from golden file");
    }
    // The column structure itself, independent of the golden bytes.
    let per_tag = render_report(&report, ReportStyle::PerTag);
    let header = per_tag.lines().nth(1).unwrap();
    assert_eq!(
        header,
        "tag\tB-Date\tI-Date\tB-Location\tI-Location\tB-Money\tI-Money\tB-Organization\
         \tI-Organization\tB-Percent\tI-Percent\tB-Person\tI-Person\tB-Time\tI-Time\tall classes"
    );
    let per_class = render_report(&report, ReportStyle::PerClass);
    assert_eq!(
        per_class.lines().nth(1).unwrap(),
        "class\tDate\tLocation\tMoney\tOrganization\tPercent\tPerson\tTime\tTotal F1"
    );
    println!(
        "[PASS] criterion 8: per-tag and per-class tables match the golden files and \
         the published column order"
    );
}
