//! Small bidirectional self-attention encoder with exact, hand-derived
//! gradients.
//!
//! The architecture is the usual post-norm block stack: token plus
//! learned absolute position embeddings, then per layer multi-head
//! scaled dot-product attention, residual + layer norm, a GELU
//! feed-forward, residual + layer norm. Everything is `f64` and every
//! intermediate needed by the backward pass is cached in [`Activation`],
//! including dropout masks, so `backward` is the exact reverse of the
//! forward computation that produced the activation.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncoderError {
    #[error("bad encoder config: {0}")]
    BadConfig(String),
    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("attention mask length {mask} does not match sequence length {len}")]
    MaskLengthMismatch { mask: usize, len: usize },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: d_model 64, 2 layers, 4 heads, d_ff 256.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            max_len: 128,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.d_ff == 0
        {
            return Err(EncoderError::BadConfig("all dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(EncoderError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 3 {
            return Err(EncoderError::BadConfig(format!(
                "max_len {} too small: need at least 3",
                self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::BadConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// The parameter tensors of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub ln1_gain: Array2<f64>,
    pub ln1_bias: Array2<f64>,
    pub ln2_gain: Array2<f64>,
    pub ln2_bias: Array2<f64>,
}

impl LayerTensors {
    fn zeros(d_model: usize, d_ff: usize) -> Self {
        Self {
            wq: Array2::zeros((d_model, d_model)),
            bq: Array2::zeros((1, d_model)),
            wk: Array2::zeros((d_model, d_model)),
            bk: Array2::zeros((1, d_model)),
            wv: Array2::zeros((d_model, d_model)),
            bv: Array2::zeros((1, d_model)),
            wo: Array2::zeros((d_model, d_model)),
            bo: Array2::zeros((1, d_model)),
            w1: Array2::zeros((d_model, d_ff)),
            b1: Array2::zeros((1, d_ff)),
            w2: Array2::zeros((d_ff, d_model)),
            b2: Array2::zeros((1, d_model)),
            ln1_gain: Array2::zeros((1, d_model)),
            ln1_bias: Array2::zeros((1, d_model)),
            ln2_gain: Array2::zeros((1, d_model)),
            ln2_bias: Array2::zeros((1, d_model)),
        }
    }

    pub(crate) fn named(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    pub(crate) fn named_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }
}

/// All encoder parameters plus the config they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub layers: Vec<LayerTensors>,
}

impl EncoderParams {
    /// Initializes parameters from the config's seed: weights are normal
    /// with standard deviation `1/sqrt(fan_in)`, biases zero, layer-norm
    /// gains one. Deterministic given the seed.
    pub fn init(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut generator = rng::seeded(rng::derive_seed(&[config.seed, 0x7061_7261_6d73_0000]));
        let mut normal = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
            let std = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = generator.sample(StandardNormal);
                z * std
            })
        };
        let d = config.d_model;
        let token_embeddings = normal(config.vocab_size, d, d);
        let position_embeddings = normal(config.max_len, d, d);
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut layer = LayerTensors::zeros(d, config.d_ff);
                layer.wq = normal(d, d, d);
                layer.wk = normal(d, d, d);
                layer.wv = normal(d, d, d);
                layer.wo = normal(d, d, d);
                layer.w1 = normal(d, config.d_ff, d);
                layer.w2 = normal(config.d_ff, d, config.d_ff);
                layer.ln1_gain.fill(1.0);
                layer.ln2_gain.fill(1.0);
                layer
            })
            .collect();
        Ok(Self {
            config,
            token_embeddings,
            position_embeddings,
            layers,
        })
    }

    /// Canonically ordered `(name, tensor)` view over every parameter.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, tensor) in layer.named() {
                out.push((format!("layer{i}.{name}"), tensor));
            }
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            (
                "position_embeddings".to_string(),
                &mut self.position_embeddings,
            ),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, tensor) in layer.named_mut() {
                out.push((format!("layer{i}.{name}"), tensor));
            }
        }
        out
    }
}

/// Gradients with the same tensor layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradients {
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub layers: Vec<LayerTensors>,
}

impl EncoderGradients {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Self {
            token_embeddings: Array2::zeros((config.vocab_size, config.d_model)),
            position_embeddings: Array2::zeros((config.max_len, config.d_model)),
            layers: (0..config.n_layers)
                .map(|_| LayerTensors::zeros(config.d_model, config.d_ff))
                .collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, tensor) in layer.named() {
                out.push((format!("layer{i}.{name}"), tensor));
            }
        }
        out
    }
}

/// Whether a forward pass applies dropout, and from which stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    Train { dropout_seed: u64 },
}

struct LnCache {
    normalized: Array2<f64>,
    inv_std: Vec<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_dropout: Option<Array2<f64>>,
    ln1: LnCache,
    hidden: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_dropout: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Cached intermediates of one forward pass plus the final representations.
pub struct Activation {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    /// Final contextual representations, `seq_len x d_model`.
    pub output: Array2<f64>,
}

impl Activation {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Attention distribution rows of one head, for diagnostics and tests.
    pub fn attention_probs(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }
}

fn gelu(u: f64) -> f64 {
    const C: f64 = 0.797884560802865; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * u * (1.0 + (C * (u + A * u * u * u)).tanh())
}

fn gelu_derivative(u: f64) -> f64 {
    const C: f64 = 0.797884560802865;
    const A: f64 = 0.044715;
    let t = (C * (u + A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * C * (1.0 + 3.0 * A * u * u)
}

/// Row-wise layer norm. Returns the output and the cache for backward.
fn layer_norm(input: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = input.ncols();
    let mut normalized = Array2::zeros(input.raw_dim());
    let mut inv_std = Vec::with_capacity(input.nrows());
    for (row, mut out_row) in input
        .axis_iter(Axis(0))
        .zip(normalized.axis_iter_mut(Axis(0)))
    {
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let scale = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(scale);
        for (o, &v) in out_row.iter_mut().zip(row.iter()) {
            *o = (v - mean) * scale;
        }
    }
    let output = &normalized * gain + bias;
    (output, LnCache { normalized, inv_std })
}

/// Backward of [`layer_norm`]: returns input gradient and accumulates
/// gain/bias gradients.
fn layer_norm_backward(
    cache: &LnCache,
    gain: &Array2<f64>,
    d_out: &Array2<f64>,
    d_gain: &mut Array2<f64>,
    d_bias: &mut Array2<f64>,
) -> Array2<f64> {
    let d = d_out.ncols() as f64;
    *d_gain += &(d_out * &cache.normalized)
        .sum_axis(Axis(0))
        .insert_axis(Axis(0));
    *d_bias += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_normalized = d_out * gain;
    let mut d_input = Array2::zeros(d_out.raw_dim());
    for ((dn_row, xhat_row), (mut di_row, &inv_std)) in d_normalized
        .axis_iter(Axis(0))
        .zip(cache.normalized.axis_iter(Axis(0)))
        .zip(d_input.axis_iter_mut(Axis(0)).zip(&cache.inv_std))
    {
        let mean_dn = dn_row.sum() / d;
        let mean_dn_xhat = dn_row
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        for ((di, &dn), &xhat) in di_row.iter_mut().zip(dn_row.iter()).zip(xhat_row.iter()) {
            *di = inv_std * (dn - mean_dn - xhat * mean_dn_xhat);
        }
    }
    d_input
}

/// Inverted-dropout mask with entries `0` or `1/(1 - rate)`.
fn dropout_mask(shape: (usize, usize), rate: f64, seed: u64) -> Array2<f64> {
    let mut generator = rng::seeded(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| {
        if generator.random::<f64>() < rate {
            0.0
        } else {
            keep_scale
        }
    })
}

/// Runs the encoder over one sequence.
///
/// Masked positions are excluded as attention keys (their logits are
/// forced to negative infinity before row normalization); with
/// `ForwardMode::Train` the cached dropout masks are drawn from streams
/// derived from the given seed, so the same seed reproduces the same
/// pass exactly.
pub fn forward(
    params: &EncoderParams,
    ids: &[u32],
    attention_mask: &[bool],
    mode: ForwardMode,
) -> Result<Activation, EncoderError> {
    let config = &params.config;
    let seq_len = ids.len();
    if seq_len > config.max_len {
        return Err(EncoderError::TooLong {
            len: seq_len,
            max_len: config.max_len,
        });
    }
    if attention_mask.len() != seq_len {
        return Err(EncoderError::MaskLengthMismatch {
            mask: attention_mask.len(),
            len: seq_len,
        });
    }
    for &id in ids {
        if id as usize >= config.vocab_size {
            return Err(EncoderError::TokenOutOfRange {
                id,
                vocab_size: config.vocab_size,
            });
        }
    }

    let d = config.d_model;
    let d_head = config.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut x = Array2::zeros((seq_len, d));
    for (t, &id) in ids.iter().enumerate() {
        let row = &params.token_embeddings.row(id as usize) + &params.position_embeddings.row(t);
        x.row_mut(t).assign(&row);
    }

    let dropout = |layer: usize, site: u64| -> Option<Array2<f64>> {
        match mode {
            ForwardMode::Eval => None,
            ForwardMode::Train { dropout_seed } => {
                if config.dropout_rate == 0.0 {
                    None
                } else {
                    let seed = rng::derive_seed(&[dropout_seed, layer as u64, site]);
                    Some(dropout_mask((seq_len, d), config.dropout_rate, seed))
                }
            }
        }
    };

    let mut layers = Vec::with_capacity(config.n_layers);
    for (layer_idx, layer) in params.layers.iter().enumerate() {
        let input = x.clone();
        let query = input.dot(&layer.wq) + &layer.bq;
        let key = input.dot(&layer.wk) + &layer.bk;
        let value = input.dot(&layer.wv) + &layer.bv;

        let mut probs = Vec::with_capacity(config.n_heads);
        let mut context = Array2::zeros((seq_len, d));
        for head in 0..config.n_heads {
            let cols = s![.., head * d_head..(head + 1) * d_head];
            let q_h = query.slice(cols);
            let k_h = key.slice(cols);
            let v_h = value.slice(cols);
            let mut scores = q_h.dot(&k_h.t());
            scores *= scale;
            for mut row in scores.axis_iter_mut(Axis(0)) {
                for (j, &live) in attention_mask.iter().enumerate() {
                    if !live {
                        row[j] = f64::NEG_INFINITY;
                    }
                }
                // Softmax with max subtraction; a row with no live key
                // normalizes to all zeros.
                let max = row.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    row.fill(0.0);
                    continue;
                }
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = if v.is_finite() { (*v - max).exp() } else { 0.0 };
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            context.slice_mut(cols).assign(&scores.dot(&v_h));
            probs.push(scores);
        }

        let attn_proj = context.dot(&layer.wo) + &layer.bo;
        let attn_dropout = dropout(layer_idx, 0);
        let attn_dropped = match &attn_dropout {
            Some(mask) => &attn_proj * mask,
            None => attn_proj,
        };
        let res1 = &input + &attn_dropped;
        let (hidden, ln1) = layer_norm(&res1, &layer.ln1_gain, &layer.ln1_bias);

        let ff_pre = hidden.dot(&layer.w1) + &layer.b1;
        let ff_act = ff_pre.mapv(gelu);
        let ff_proj = ff_act.dot(&layer.w2) + &layer.b2;
        let ff_dropout = dropout(layer_idx, 1);
        let ff_dropped = match &ff_dropout {
            Some(mask) => &ff_proj * mask,
            None => ff_proj,
        };
        let res2 = &hidden + &ff_dropped;
        let (output, ln2) = layer_norm(&res2, &layer.ln2_gain, &layer.ln2_bias);

        layers.push(LayerCache {
            input,
            query,
            key,
            value,
            probs,
            context,
            attn_dropout,
            ln1,
            hidden,
            ff_pre,
            ff_act,
            ff_dropout,
            ln2,
        });
        x = output;
    }

    Ok(Activation {
        ids: ids.to_vec(),
        layers,
        output: x,
    })
}

/// Exact reverse-mode pass: gradients of the scalar loss whose gradient
/// with respect to the final representations is `output_gradient`.
pub fn backward(
    params: &EncoderParams,
    activation: &Activation,
    output_gradient: &Array2<f64>,
) -> Result<EncoderGradients, EncoderError> {
    let config = &params.config;
    let seq_len = activation.seq_len();
    let d = config.d_model;
    if output_gradient.dim() != (seq_len, d) {
        return Err(EncoderError::ShapeMismatch {
            expected: format!("{seq_len}x{d}"),
            got: format!("{}x{}", output_gradient.nrows(), output_gradient.ncols()),
        });
    }

    let d_head = config.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut grads = EncoderGradients::zeros(config);
    let mut d_out = output_gradient.clone();

    for (layer_idx, (layer, cache)) in params
        .layers
        .iter()
        .zip(&activation.layers)
        .enumerate()
        .rev()
    {
        let grad = &mut grads.layers[layer_idx];

        let d_res2 = layer_norm_backward(
            &cache.ln2,
            &layer.ln2_gain,
            &d_out,
            &mut grad.ln2_gain,
            &mut grad.ln2_bias,
        );
        let mut d_hidden = d_res2.clone();
        let d_ff_proj = match &cache.ff_dropout {
            Some(mask) => &d_res2 * mask,
            None => d_res2,
        };
        grad.w2 += &cache.ff_act.t().dot(&d_ff_proj);
        grad.b2 += &d_ff_proj.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_ff_act = d_ff_proj.dot(&layer.w2.t());
        let d_ff_pre = &d_ff_act * &cache.ff_pre.mapv(gelu_derivative);
        grad.w1 += &cache.hidden.t().dot(&d_ff_pre);
        grad.b1 += &d_ff_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_hidden += &d_ff_pre.dot(&layer.w1.t());

        let d_res1 = layer_norm_backward(
            &cache.ln1,
            &layer.ln1_gain,
            &d_hidden,
            &mut grad.ln1_gain,
            &mut grad.ln1_bias,
        );
        let mut d_input = d_res1.clone();
        let d_attn_proj = match &cache.attn_dropout {
            Some(mask) => &d_res1 * mask,
            None => d_res1,
        };
        grad.wo += &cache.context.t().dot(&d_attn_proj);
        grad.bo += &d_attn_proj.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_context = d_attn_proj.dot(&layer.wo.t());

        let mut d_query = Array2::zeros((seq_len, d));
        let mut d_key = Array2::zeros((seq_len, d));
        let mut d_value = Array2::zeros((seq_len, d));
        for head in 0..config.n_heads {
            let cols = s![.., head * d_head..(head + 1) * d_head];
            let probs = &cache.probs[head];
            let d_context_h = d_context.slice(cols);
            let v_h = cache.value.slice(cols);
            let q_h = cache.query.slice(cols);
            let k_h = cache.key.slice(cols);

            d_value
                .slice_mut(cols)
                .assign(&probs.t().dot(&d_context_h));
            let d_probs = d_context_h.dot(&v_h.t());
            // Softmax backward row by row; all-zero rows (fully masked)
            // stay zero.
            let mut d_scores = Array2::zeros((seq_len, seq_len));
            for ((dp_row, p_row), mut ds_row) in d_probs
                .axis_iter(Axis(0))
                .zip(probs.axis_iter(Axis(0)))
                .zip(d_scores.axis_iter_mut(Axis(0)))
            {
                let dot = dp_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum::<f64>();
                for ((ds, &dp), &p) in ds_row.iter_mut().zip(dp_row.iter()).zip(p_row.iter()) {
                    *ds = (dp - dot) * p;
                }
            }
            d_scores *= scale;
            d_query.slice_mut(cols).assign(&d_scores.dot(&k_h));
            d_key.slice_mut(cols).assign(&d_scores.t().dot(&q_h));
        }

        grad.wq += &cache.input.t().dot(&d_query);
        grad.bq += &d_query.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.wk += &cache.input.t().dot(&d_key);
        grad.bk += &d_key.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad.wv += &cache.input.t().dot(&d_value);
        grad.bv += &d_value.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_input += &d_query.dot(&layer.wq.t());
        d_input += &d_key.dot(&layer.wk.t());
        d_input += &d_value.dot(&layer.wv.t());

        d_out = d_input;
    }

    for (t, &id) in activation.ids.iter().enumerate() {
        let d_row = d_out.row(t);
        let mut token_row = grads.token_embeddings.row_mut(id as usize);
        token_row += &d_row;
        let mut pos_row = grads.position_embeddings.row_mut(t);
        pos_row += &d_row;
    }

    Ok(grads)
}
