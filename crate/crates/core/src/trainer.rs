//! Mini-batch training of encoder + projection + CRF, with early
//! stopping on dev phrase-level F1, plus the k-fold cross-validation
//! harness and the shared prediction path.
//!
//! Determinism contract: batch order, dropout draws, and the dev carve
//! are all derived from `(seed, epoch, batch, sequence)` rather than
//! mutable generator state, so resuming from a checkpoint replays the
//! remaining epochs bit-identically, and parallel gradient computation
//! (ordered reduction) gives the same sums as the serial path.

use ndarray::Array2;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, LabelId, TaggedSentence, Tagset};
use crate::crf::{
    self, CrfError, EmissionMatrix, Projection, TransitionMatrix,
};
use crate::encoder::{self, EncoderConfig, EncoderError, EncoderGradients, EncoderParams, ForwardMode};
use crate::eval::{evaluate_corpus, EvalError, EvalReport};
use crate::rng;
use crate::tokenizer::{align, train_bpe, word_counts, AlignedSequence, MergeTable, TokenizerError};

const DEV_SALT: u64 = 0x6465_765f;
const EPOCH_SALT: u64 = 0x6570_6f63;
const DROPOUT_SALT: u64 = 0x6472_6f70;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad train config: {0}")]
    BadTrainConfig(String),
    #[error("sentence {sentence}: {source}")]
    Alignment {
        sentence: usize,
        source: TokenizerError,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dev set is empty (supply one or leave enough training sentences to carve 10%)")]
    EmptyDev,
    #[error("corpora use different tagsets")]
    TagsetMismatch,
    #[error("encoder vocab size {config} does not match merge table vocabulary {merges}")]
    VocabMismatch { config: usize, merges: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    /// Global-norm clip threshold; 0 disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Stop after this many epochs without dev improvement; 0 disables.
    pub patience: usize,
    /// Fraction of training sentences held out when no dev set is given.
    pub dev_fraction: f64,
    /// Worker threads for per-sequence forward/backward; 1 is serial.
    pub threads: usize,
    /// Penalize `O -> I-c` and `B-c -> I-c'` transitions at init.
    pub constrain_transitions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            grad_clip_norm: 1.0,
            seed: rng::DEFAULT_SEED,
            patience: 5,
            dev_fraction: 0.1,
            threads: 1,
            constrain_transitions: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::BadTrainConfig(what.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.weight_decay < 0.0 || self.grad_clip_norm < 0.0 {
            return bad("weight_decay and grad_clip_norm must be non-negative");
        }
        if !self.dev_fraction.is_finite() || self.dev_fraction <= 0.0 || self.dev_fraction >= 1.0 {
            return bad("dev_fraction must be in (0, 1)");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}

/// The trainable artifact: tokenizer, encoder, projection, transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub tagset: Tagset,
    pub merges: MergeTable,
    pub encoder: EncoderParams,
    pub projection: Projection,
    pub transitions: TransitionMatrix,
}

impl CrfModel {
    pub fn init(
        tagset: Tagset,
        merges: MergeTable,
        encoder_config: EncoderConfig,
        constrain_transitions: bool,
    ) -> Result<Self, TrainError> {
        if encoder_config.vocab_size != merges.vocab_size() {
            return Err(TrainError::VocabMismatch {
                config: encoder_config.vocab_size,
                merges: merges.vocab_size(),
            });
        }
        let label_count = tagset.extended_label_count();
        let encoder = EncoderParams::init(encoder_config)?;
        let projection = Projection::init(encoder_config.d_model, label_count, encoder_config.seed);
        let mut transitions = TransitionMatrix::zeros(label_count);
        if constrain_transitions {
            transitions.apply_bio_constraints(&tagset);
        }
        Ok(Self {
            tagset,
            merges,
            encoder,
            projection,
            transitions,
        })
    }

    /// Canonical `(name, tensor)` order shared by the optimizer state
    /// and the checkpoint format.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = self
            .encoder
            .named_tensors()
            .into_iter()
            .map(|(name, tensor)| (format!("encoder.{name}"), tensor))
            .collect();
        out.push(("projection.weight".to_string(), &self.projection.weight));
        out.push(("projection.bias".to_string(), &self.projection.bias));
        out.push(("crf.trans".to_string(), &self.transitions.trans));
        out.push(("crf.start".to_string(), &self.transitions.start));
        out.push(("crf.stop".to_string(), &self.transitions.stop));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = self
            .encoder
            .named_tensors_mut()
            .into_iter()
            .map(|(name, tensor)| (format!("encoder.{name}"), tensor))
            .collect();
        out.push(("projection.weight".to_string(), &mut self.projection.weight));
        out.push(("projection.bias".to_string(), &mut self.projection.bias));
        out.push(("crf.trans".to_string(), &mut self.transitions.trans));
        out.push(("crf.start".to_string(), &mut self.transitions.start));
        out.push(("crf.stop".to_string(), &mut self.transitions.stop));
        out
    }

    /// Viterbi-decodes one tokenized sentence. Words beyond the
    /// encoder's `max_len` budget are truncated away and predicted `O`.
    pub fn predict_sentence(&self, tokens: &[String]) -> Result<Vec<LabelId>, TrainError> {
        let placeholder = vec![LabelId::OUTSIDE; tokens.len()];
        let sentence = TaggedSentence::new(tokens.to_vec(), placeholder)?;
        let aligned = align(
            &sentence,
            &self.merges,
            &self.tagset,
            self.encoder.config.max_len,
        )?;
        let decoded = self.decode_aligned(&aligned)?;
        let mut tags = decoded;
        tags.resize(tokens.len(), LabelId::OUTSIDE);
        Ok(tags)
    }

    /// Shared decode path: forward, project to emissions, Viterbi over
    /// supervised positions, project back to words.
    fn decode_aligned(&self, aligned: &AlignedSequence) -> Result<Vec<LabelId>, TrainError> {
        let activation = encoder::forward(
            &self.encoder,
            &aligned.subword_ids,
            &aligned.attention_mask,
            ForwardMode::Eval,
        )?;
        let emissions = crf::emissions(
            &activation.output,
            &self.projection,
            &aligned.supervised_mask(),
        )?;
        let (path, _) = crf::viterbi(&emissions, &self.transitions)?;
        let mut predictions = vec![self.tagset.x_label(); aligned.len()];
        let mut step = 0;
        for (position, &live) in emissions.label_mask.iter().enumerate() {
            if live {
                predictions[position] = LabelId(path[step] as u16);
                step += 1;
            }
        }
        let projected = crate::tokenizer::project_to_words(aligned, &predictions, &self.tagset)?;
        Ok(projected.tags)
    }
}

/// Predicts every sentence of a corpus (errors propagate; see
/// [`CrfModel::predict_sentence`] for the per-sentence contract).
pub fn predict_corpus(
    model: &CrfModel,
    corpus: &Corpus,
    threads: usize,
) -> Result<Vec<Vec<LabelId>>, TrainError> {
    par_map(&corpus.sentences, threads, |_, sentence| {
        model.predict_sentence(&sentence.tokens)
    })
    .into_iter()
    .collect()
}

/// Ordered parallel map: results come back in input order, so floating
/// point reductions downstream are schedule-independent.
fn par_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(usize, &T) -> R + Sync,
) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        items
            .par_iter()
            .enumerate()
            .map(|(i, item)| f(i, item))
            .collect()
    })
}

/// One padded training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sentence_index: usize,
    pub aligned: AlignedSequence,
}

/// Aligns, shuffles (per epoch), groups, and pads a corpus into batches.
/// Deterministic given `(seed, epoch)`.
pub fn make_batches(
    corpus: &Corpus,
    merges: &MergeTable,
    batch_size: usize,
    max_len: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>, TrainError> {
    let tagset = &corpus.tagset;
    let mut aligned = Vec::with_capacity(corpus.len());
    for (index, sentence) in corpus.sentences.iter().enumerate() {
        let sequence = align(sentence, merges, tagset, max_len)
            .map_err(|source| TrainError::Alignment { sentence: index, source })?;
        aligned.push(sequence);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(&[
        seed,
        EPOCH_SALT,
        epoch as u64,
    ])));

    let x = tagset.x_label();
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let padded_len = chunk
            .iter()
            .map(|&i| aligned[i].len())
            .max()
            .expect("nonempty chunk");
        let items = chunk
            .iter()
            .map(|&i| {
                let mut sequence = aligned[i].clone();
                sequence.pad_to(padded_len, x);
                BatchItem {
                    sentence_index: i,
                    aligned: sequence,
                }
            })
            .collect();
        batches.push(Batch { items });
    }
    Ok(batches)
}

/// Gradients for every trainable tensor, in the model's canonical order.
struct ModelGradients {
    encoder: EncoderGradients,
    proj_weight: Array2<f64>,
    proj_bias: Array2<f64>,
    trans: Array2<f64>,
    start: Array2<f64>,
    stop: Array2<f64>,
}

impl ModelGradients {
    fn zeros(model: &CrfModel) -> Self {
        let label_count = model.projection.label_count();
        let d_model = model.encoder.config.d_model;
        Self {
            encoder: EncoderGradients::zeros(&model.encoder.config),
            proj_weight: Array2::zeros((d_model, label_count)),
            proj_bias: Array2::zeros((1, label_count)),
            trans: Array2::zeros((label_count, label_count)),
            start: Array2::zeros((1, label_count)),
            stop: Array2::zeros((1, label_count)),
        }
    }

    fn accumulate(&mut self, other: &ModelGradients) {
        self.encoder.token_embeddings += &other.encoder.token_embeddings;
        self.encoder.position_embeddings += &other.encoder.position_embeddings;
        for (mine, theirs) in self.encoder.layers.iter_mut().zip(&other.encoder.layers) {
            for ((_, a), (_, b)) in mine.named_mut().into_iter().zip(theirs.named()) {
                *a += b;
            }
        }
        self.proj_weight += &other.proj_weight;
        self.proj_bias += &other.proj_bias;
        self.trans += &other.trans;
        self.start += &other.start;
        self.stop += &other.stop;
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![
            &mut self.encoder.token_embeddings,
            &mut self.encoder.position_embeddings,
        ];
        for layer in &mut self.encoder.layers {
            for (_, tensor) in layer.named_mut() {
                out.push(tensor);
            }
        }
        out.push(&mut self.proj_weight);
        out.push(&mut self.proj_bias);
        out.push(&mut self.trans);
        out.push(&mut self.start);
        out.push(&mut self.stop);
        out
    }

    fn scale(&mut self, factor: f64) {
        for tensor in self.tensors_mut() {
            tensor.mapv_inplace(|v| v * factor);
        }
    }

    fn global_norm(&mut self) -> f64 {
        let mut total = 0.0;
        for tensor in self.tensors_mut() {
            total += tensor.iter().map(|v| v * v).sum::<f64>();
        }
        total.sqrt()
    }
}

/// Rescales gradients so the global norm is at most `clip`; `clip <= 0`
/// disables clipping. Returns the pre-clip norm.
fn clip_gradients(gradients: &mut ModelGradients, clip: f64) -> f64 {
    let norm = gradients.global_norm();
    if clip > 0.0 && norm > clip {
        gradients.scale(clip / norm);
    }
    norm
}

/// Adam first/second moments plus the shared step counter, aligned with
/// the model's canonical tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moments: Vec<Array2<f64>>,
    pub second_moments: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn zeros(model: &CrfModel) -> Self {
        let shapes: Vec<Array2<f64>> = model
            .named_tensors()
            .into_iter()
            .map(|(_, tensor)| Array2::zeros(tensor.raw_dim()))
            .collect();
        Self {
            step: 0,
            first_moments: shapes.clone(),
            second_moments: shapes,
        }
    }
}

/// One Adam update with bias correction and decoupled weight decay.
fn adam_step(
    model: &mut CrfModel,
    gradients: &mut ModelGradients,
    state: &mut AdamState,
    config: &TrainConfig,
) {
    state.step += 1;
    let step = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(step);
    let bias2 = 1.0 - config.beta2.powi(step);
    let grads = gradients.tensors_mut();
    let params = model.named_tensors_mut();
    debug_assert_eq!(grads.len(), params.len());
    for (((_, param), grad), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.first_moments.iter_mut().zip(&mut state.second_moments))
    {
        azip_update(param, grad, m, v, config, bias1, bias2);
    }
}

fn azip_update(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    config: &TrainConfig,
    bias1: f64,
    bias2: f64,
) {
    let lr = config.learning_rate;
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad.iter())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        let mut update = m_hat / (v_hat.sqrt() + config.epsilon);
        if config.weight_decay > 0.0 {
            update += config.weight_decay * *p;
        }
        *p -= lr * update;
    }
}

/// Metrics recorded after each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based absolute epoch index.
    pub epoch: usize,
    /// Mean per-sequence CRF NLL over the epoch.
    pub train_loss: f64,
    /// Dev phrase-level total F1 after the epoch.
    pub dev_f1: f64,
}

/// Model tensors frozen at the best dev epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub dev_f1: f64,
    pub encoder: EncoderParams,
    pub projection: Projection,
    pub transitions: TransitionMatrix,
}

/// Full training state: latest model + optimizer for resumption, the
/// best-epoch snapshot for prediction, and the metric history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CrfModel,
    pub optimizer: AdamState,
    /// Epochs completed so far (equals `history.len()`).
    pub epochs_done: usize,
    pub history: Vec<EpochMetrics>,
    pub best: BestSnapshot,
}

impl Checkpoint {
    /// The model as selected by dev F1 — what prediction should use.
    pub fn best_model(&self) -> CrfModel {
        CrfModel {
            tagset: self.model.tagset.clone(),
            merges: self.model.merges.clone(),
            encoder: self.best.encoder.clone(),
            projection: self.best.projection.clone(),
            transitions: self.best.transitions.clone(),
        }
    }
}

/// Deterministically splits `corpus` into (train, dev) when the caller
/// supplies no dev set: `dev_fraction` of the sentences (at least one)
/// are held out by a seeded shuffle.
pub fn carve_dev(
    corpus: &Corpus,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), TrainError> {
    let n = corpus.len();
    let dev_size = ((n as f64 * dev_fraction) as usize).max(1);
    if dev_size >= n {
        return Err(TrainError::EmptyDev);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(&[seed, DEV_SALT])));
    let mut dev_indices = order[..dev_size].to_vec();
    let mut train_indices = order[dev_size..].to_vec();
    dev_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok((corpus.subset(&train_indices)?, corpus.subset(&dev_indices)?))
}

/// Trains a fresh model. With `dev = None`, a dev slice is carved from
/// the training corpus first (see [`carve_dev`]).
pub fn train(
    train_corpus: &Corpus,
    dev_corpus: Option<&Corpus>,
    merges: MergeTable,
    encoder_config: EncoderConfig,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    let (train_owned, dev_owned);
    let (train_part, dev_part) = match dev_corpus {
        Some(dev) => {
            if dev.is_empty() {
                return Err(TrainError::EmptyDev);
            }
            if dev.tagset != train_corpus.tagset {
                return Err(TrainError::TagsetMismatch);
            }
            (train_corpus, dev)
        }
        None => {
            (train_owned, dev_owned) = carve_dev(train_corpus, config.dev_fraction, config.seed)?;
            (&train_owned, &dev_owned)
        }
    };
    let model = CrfModel::init(
        train_corpus.tagset.clone(),
        merges,
        encoder_config,
        config.constrain_transitions,
    )?;
    let optimizer = AdamState::zeros(&model);
    train_loop(model, optimizer, Vec::new(), None, train_part, dev_part, config)
}

/// Continues training from a checkpoint's latest state. The same
/// corpora and seed must be supplied for the run to replay exactly.
pub fn resume(
    checkpoint: Checkpoint,
    train_corpus: &Corpus,
    dev_corpus: Option<&Corpus>,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    if checkpoint.model.tagset != train_corpus.tagset {
        return Err(TrainError::TagsetMismatch);
    }
    let (train_owned, dev_owned);
    let (train_part, dev_part) = match dev_corpus {
        Some(dev) => {
            if dev.is_empty() {
                return Err(TrainError::EmptyDev);
            }
            (train_corpus, dev)
        }
        None => {
            (train_owned, dev_owned) = carve_dev(train_corpus, config.dev_fraction, config.seed)?;
            (&train_owned, &dev_owned)
        }
    };
    let Checkpoint {
        model,
        optimizer,
        history,
        best,
        ..
    } = checkpoint;
    train_loop(
        model,
        optimizer,
        history,
        Some(best),
        train_part,
        dev_part,
        config,
    )
}

/// Epoch of the last strict dev-F1 improvement in a history.
fn last_strict_improvement(history: &[EpochMetrics]) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut epoch = None;
    for entry in history {
        if entry.dev_f1 > best {
            best = entry.dev_f1;
            epoch = Some(entry.epoch);
        }
    }
    epoch
}

fn train_loop(
    mut model: CrfModel,
    mut optimizer: AdamState,
    mut history: Vec<EpochMetrics>,
    mut best: Option<BestSnapshot>,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    config: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    let max_len = model.encoder.config.max_len;
    let start_epoch = history.len() + 1;
    let mut last_improvement = last_strict_improvement(&history);

    for epoch in start_epoch..=config.epochs {
        let batches = make_batches(
            train_corpus,
            &model.merges,
            config.batch_size,
            max_len,
            config.seed,
            epoch,
        )?;
        let mut loss_sum = 0.0;
        let mut sequence_count = 0usize;
        for (batch_index, batch) in batches.iter().enumerate() {
            let results = par_map(&batch.items, config.threads, |item_index, item| {
                let dropout_seed = rng::derive_seed(&[
                    config.seed,
                    DROPOUT_SALT,
                    epoch as u64,
                    batch_index as u64,
                    item_index as u64,
                ]);
                sequence_gradients(&model, &item.aligned, dropout_seed)
            });

            let mut gradients = ModelGradients::zeros(&model);
            let mut batch_loss = 0.0;
            for result in results {
                let (loss, sequence_grads) = result?;
                batch_loss += loss;
                gradients.accumulate(&sequence_grads);
            }
            let count = batch.items.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            gradients.scale(1.0 / count);
            loss_sum += batch_loss;
            sequence_count += batch.items.len();

            clip_gradients(&mut gradients, config.grad_clip_norm);
            adam_step(&mut model, &mut gradients, &mut optimizer, config);
        }

        let predictions = predict_corpus(&model, dev_corpus, config.threads)?;
        let report = evaluate_corpus(dev_corpus, &predictions)?;
        let dev_f1 = report.phrase_total().f1();
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / sequence_count as f64,
            dev_f1,
        });

        // Strict improvements reset patience; ties also refresh the
        // snapshot so "best" is the latest (lowest-loss) model at the
        // best score rather than the first epoch that reached it.
        let strictly_improved = best.as_ref().is_none_or(|b| dev_f1 > b.dev_f1);
        let tied = best.as_ref().is_some_and(|b| dev_f1 == b.dev_f1);
        if strictly_improved {
            last_improvement = Some(epoch);
        }
        if strictly_improved || tied {
            best = Some(BestSnapshot {
                epoch,
                dev_f1,
                encoder: model.encoder.clone(),
                projection: model.projection.clone(),
                transitions: model.transitions.clone(),
            });
        }
        if config.patience > 0 {
            let reference = last_improvement.expect("set after first epoch");
            if epoch - reference >= config.patience {
                break;
            }
        }
    }

    let best = best.unwrap_or_else(|| BestSnapshot {
        epoch: 0,
        dev_f1: 0.0,
        encoder: model.encoder.clone(),
        projection: model.projection.clone(),
        transitions: model.transitions.clone(),
    });
    Ok(Checkpoint {
        epochs_done: history.len(),
        model,
        optimizer,
        history,
        best,
    })
}

/// Forward + CRF loss + full backward for one aligned sequence.
fn sequence_gradients(
    model: &CrfModel,
    aligned: &AlignedSequence,
    dropout_seed: u64,
) -> Result<(f64, ModelGradients), TrainError> {
    let activation = encoder::forward(
        &model.encoder,
        &aligned.subword_ids,
        &aligned.attention_mask,
        ForwardMode::Train { dropout_seed },
    )?;
    let label_mask = aligned.supervised_mask();
    let emissions: EmissionMatrix =
        crf::emissions(&activation.output, &model.projection, &label_mask)?;
    let gold: Vec<usize> = aligned
        .labels
        .iter()
        .zip(&label_mask)
        .filter_map(|(&label, &live)| live.then_some(label.as_usize()))
        .collect();
    let crf_grads = crf::nll_and_grads(&emissions, &model.transitions, &gold)?;

    let representation_grad = crf_grads.grad_emissions.dot(&model.projection.weight.t());
    let encoder_grads = encoder::backward(&model.encoder, &activation, &representation_grad)?;

    let gradients = ModelGradients {
        encoder: encoder_grads,
        proj_weight: activation.output.t().dot(&crf_grads.grad_emissions),
        proj_bias: crf_grads
            .grad_emissions
            .sum_axis(ndarray::Axis(0))
            .insert_axis(ndarray::Axis(0)),
        trans: crf_grads.grad_trans,
        start: crf_grads.grad_start,
        stop: crf_grads.grad_stop,
    };
    Ok((crf_grads.loss, gradients))
}

/// Per-fold assignment for cross-validation: which sentences form the
/// training pool and which are held out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold: usize,
    pub train_pool: Vec<usize>,
    pub test: Vec<usize>,
}

/// The split each cross-validation round will use.
pub fn cross_validation_plan(
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<Vec<FoldPlan>, CorpusError> {
    let split = crate::corpus::split_kfold(corpus, k, seed)?;
    Ok((0..k)
        .map(|fold| FoldPlan {
            fold,
            train_pool: split.complement_indices(fold),
            test: split.fold_indices(fold),
        })
        .collect())
}

/// Outcome of one cross-validation round.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub best_dev_f1: f64,
    pub epochs_run: usize,
    pub report: EvalReport,
}

/// Per-fold and pooled (micro over all folds' decisions) scores.
#[derive(Debug, Clone)]
pub struct CrossValOutcome {
    pub folds: Vec<FoldOutcome>,
    pub pooled: EvalReport,
}

/// K-fold cross-validation: for each fold, a BPE table is trained on
/// the other `k - 1` folds (capped at `vocab_size`), a model is trained
/// with a dev slice carved from the training pool, and the held-out
/// fold is scored with the best checkpoint.
pub fn cross_validate(
    corpus: &Corpus,
    k: usize,
    vocab_size: usize,
    encoder_config: EncoderConfig,
    config: &TrainConfig,
) -> Result<CrossValOutcome, TrainError> {
    let plans = cross_validation_plan(corpus, k, config.seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut pooled: Option<EvalReport> = None;
    for plan in plans {
        let train_part = corpus.subset(&plan.train_pool)?;
        let test_part = corpus.subset(&plan.test)?;
        let merges = train_bpe(&word_counts(&train_part), vocab_size)?;
        let fold_config = EncoderConfig {
            vocab_size: merges.vocab_size(),
            ..encoder_config
        };
        let checkpoint = train(&train_part, None, merges, fold_config, config)?;
        let model = checkpoint.best_model();
        let predictions = predict_corpus(&model, &test_part, config.threads)?;
        let report = evaluate_corpus(&test_part, &predictions)?;
        match pooled.as_mut() {
            Some(total) => total.merge(&report)?,
            None => pooled = Some(report.clone()),
        }
        folds.push(FoldOutcome {
            fold: plan.fold,
            train_sentences: train_part.len(),
            test_sentences: test_part.len(),
            best_dev_f1: checkpoint.best.dev_f1,
            epochs_run: checkpoint.epochs_done,
            report,
        });
    }
    Ok(CrossValOutcome {
        folds,
        pooled: pooled.expect("k >= 2 folds"),
    })
}
