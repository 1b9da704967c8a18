//! Finite-difference gradient oracles shared by the gradient-check and
//! acceptance suites. The numerical side only ever calls `forward` (or
//! the CRF loss) on perturbed parameters, so it stays independent of
//! the backward code it checks.

use ndarray::Array2;
use rand::Rng;

use seqtag_core::crf::{nll_and_grads, EmissionMatrix, TransitionMatrix};
use seqtag_core::encoder::{backward, forward, EncoderConfig, EncoderParams, ForwardMode};
use seqtag_core::rng;

use super::random_crf_instance;

pub const FD_STEP: f64 = 1e-4;
pub const ENCODER_TOLERANCE: f64 = 1e-3;
pub const CRF_FD_STEP: f64 = 1e-5;
pub const CRF_TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Scalar probe loss: sum of the final representations weighted by a
/// fixed random matrix.
fn probe_loss(
    params: &EncoderParams,
    ids: &[u32],
    mask: &[bool],
    mode: ForwardMode,
    weights: &Array2<f64>,
) -> f64 {
    let activation = forward(params, ids, mask, mode).expect("forward");
    (&activation.output * weights).sum()
}

fn tensor_mut<'a>(params: &'a mut EncoderParams, name: &str) -> &'a mut Array2<f64> {
    params
        .named_tensors_mut()
        .into_iter()
        .find(|(n, _)| n == name)
        .unwrap()
        .1
}

/// Checks every encoder parameter gradient against central finite
/// differences on a 4-token, d_model 16, single-layer instance.
pub fn check_encoder_instance(seed: u64, mode: ForwardMode, dropout_rate: f64) {
    let config = EncoderConfig {
        vocab_size: 9,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 24,
        max_len: 6,
        dropout_rate,
        seed,
    };
    let params = EncoderParams::init(config).unwrap();
    let mut generator = rng::seeded(rng::derive_seed(&[seed, 0xf00d]));
    let ids: Vec<u32> = (0..4)
        .map(|_| generator.random_range(0..config.vocab_size as u32))
        .collect();
    // Mask one position on odd seeds so masking is exercised too.
    let mask = if seed % 2 == 1 {
        vec![true, true, false, true]
    } else {
        vec![true; 4]
    };
    let weights = Array2::from_shape_fn((4, config.d_model), |_| {
        generator.random_range(-1.0..1.0)
    });

    let activation = forward(&params, &ids, &mask, mode).unwrap();
    let analytic = backward(&params, &activation, &weights).unwrap();

    let names: Vec<String> = params
        .named_tensors()
        .into_iter()
        .map(|(name, _)| name)
        .collect();
    for name in names {
        let shape = {
            let tensors = params.named_tensors();
            let (_, tensor) = tensors.iter().find(|(n, _)| *n == name).unwrap();
            tensor.raw_dim()
        };
        for row in 0..shape[0] {
            for col in 0..shape[1] {
                let mut perturbed = params.clone();
                *tensor_mut(&mut perturbed, &name).get_mut((row, col)).unwrap() += FD_STEP;
                let loss_plus = probe_loss(&perturbed, &ids, &mask, mode, &weights);
                *tensor_mut(&mut perturbed, &name).get_mut((row, col)).unwrap() -= 2.0 * FD_STEP;
                let loss_minus = probe_loss(&perturbed, &ids, &mask, mode, &weights);
                let numeric = (loss_plus - loss_minus) / (2.0 * FD_STEP);
                let analytic_value = analytic
                    .named_tensors()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap()
                    .1[(row, col)];
                let error = relative_error(analytic_value, numeric);
                assert!(
                    error < ENCODER_TOLERANCE,
                    "seed {seed} tensor {name}[{row},{col}]: analytic {analytic_value:.10e} \
                     vs numeric {numeric:.10e} (rel {error:.3e})"
                );
            }
        }
    }
}

fn crf_loss(em: &EmissionMatrix, tr: &TransitionMatrix, gold: &[usize]) -> f64 {
    nll_and_grads(em, tr, gold).unwrap().loss
}

/// Checks every CRF gradient (emissions, transitions, start, stop)
/// against central finite differences on a 4-position, 3-label instance.
pub fn check_crf_instance(seed: u64) {
    let (em, tr) = random_crf_instance(seed, 4, 3, seed % 2 == 1);
    let chain_len = em.label_mask.iter().filter(|&&m| m).count();
    let mut generator = rng::seeded(rng::derive_seed(&[seed, 0x6042]));
    let gold: Vec<usize> = (0..chain_len).map(|_| generator.random_range(0..3)).collect();

    let analytic = nll_and_grads(&em, &tr, &gold).unwrap();
    assert!(analytic.loss >= 0.0);

    let check = |analytic_value: f64, loss_plus: f64, loss_minus: f64, what: &str| {
        let numeric = (loss_plus - loss_minus) / (2.0 * CRF_FD_STEP);
        let error = relative_error(analytic_value, numeric);
        assert!(
            error < CRF_TOLERANCE,
            "seed {seed} {what}: analytic {analytic_value:.10e} vs numeric {numeric:.10e} (rel {error:.3e})"
        );
    };

    for row in 0..em.seq_len() {
        for col in 0..em.label_count() {
            let mut plus = em.clone();
            plus.scores[[row, col]] += CRF_FD_STEP;
            let mut minus = em.clone();
            minus.scores[[row, col]] -= CRF_FD_STEP;
            check(
                analytic.grad_emissions[[row, col]],
                crf_loss(&plus, &tr, &gold),
                crf_loss(&minus, &tr, &gold),
                &format!("emissions[{row},{col}]"),
            );
        }
    }
    for from in 0..3 {
        for to in 0..3 {
            let mut plus = tr.clone();
            plus.trans[[from, to]] += CRF_FD_STEP;
            let mut minus = tr.clone();
            minus.trans[[from, to]] -= CRF_FD_STEP;
            check(
                analytic.grad_trans[[from, to]],
                crf_loss(&em, &plus, &gold),
                crf_loss(&em, &minus, &gold),
                &format!("trans[{from},{to}]"),
            );
        }
    }
    for label in 0..3 {
        let mut plus = tr.clone();
        plus.start[[0, label]] += CRF_FD_STEP;
        let mut minus = tr.clone();
        minus.start[[0, label]] -= CRF_FD_STEP;
        check(
            analytic.grad_start[[0, label]],
            crf_loss(&em, &plus, &gold),
            crf_loss(&em, &minus, &gold),
            &format!("start[{label}]"),
        );
        let mut plus = tr.clone();
        plus.stop[[0, label]] += CRF_FD_STEP;
        let mut minus = tr.clone();
        minus.stop[[0, label]] -= CRF_FD_STEP;
        check(
            analytic.grad_stop[[0, label]],
            crf_loss(&em, &plus, &gold),
            crf_loss(&em, &minus, &gold),
            &format!("stop[{label}]"),
        );
    }
}
