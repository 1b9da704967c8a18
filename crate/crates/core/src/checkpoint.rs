//! Versioned binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SQTGCKPT"
//! version u32      currently 1
//! length  u64      payload byte count
//! digest  32 bytes SHA-256 of the payload
//! payload:
//!   tagset      name lpstr, class count u32, classes lpstr...
//!   merge table vocab file lpstr, merges file lpstr (the two text
//!               formats defined by the tokenizer)
//!   encoder cfg vocab_size, d_model, n_heads, n_layers, d_ff, max_len
//!               as u64, dropout f64, seed u64
//!   epochs done u64
//!   history     count u32, then per epoch: epoch u64, train_loss f64,
//!               dev_f1 f64
//!   best        epoch u64, dev_f1 f64
//!   optimizer   step u64
//!   tensors     count u32, then per tensor: name lpstr, rows u64,
//!               cols u64, rows*cols f64
//! ```
//!
//! `lpstr` is a u32 byte length followed by UTF-8 bytes. Tensor names
//! are `model.*` (latest parameters), `best.*` (best-epoch parameters),
//! and `opt.m.*` / `opt.v.*` (Adam moments). Floats are stored as raw
//! IEEE-754 bits, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::EncoderConfig;
use crate::tokenizer::MergeTable;
use crate::trainer::{AdamState, BestSnapshot, Checkpoint, CrfModel, EpochMetrics};
use crate::corpus::Tagset;

const MAGIC: &[u8; 8] = b"SQTGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn corrupt(message: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(message.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u32(&mut self, value: u32) {
        self.buf.extend_from_slice(&value.to_le_bytes());
    }

    fn u64(&mut self, value: u64) {
        self.buf.extend_from_slice(&value.to_le_bytes());
    }

    fn f64(&mut self, value: f64) {
        self.buf.extend_from_slice(&value.to_le_bytes());
    }

    fn str(&mut self, value: &str) {
        self.u32(value.len() as u32);
        self.buf.extend_from_slice(value.as_bytes());
    }

    fn tensor(&mut self, name: &str, tensor: &Array2<f64>) {
        self.str(name);
        self.u64(tensor.nrows() as u64);
        self.u64(tensor.ncols() as u64);
        for &value in tensor.iter() {
            self.f64(value);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt("unexpected end of payload"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| corrupt("invalid UTF-8 string"))
    }

    fn tensor(&mut self) -> Result<(String, Array2<f64>), CheckpointError> {
        let name = self.str()?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        if rows.checked_mul(cols).is_none_or(|n| n > 1 << 30) {
            return Err(corrupt(format!("tensor {name} has absurd shape {rows}x{cols}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        let tensor = Array2::from_shape_vec((rows, cols), data)
            .map_err(|_| corrupt(format!("tensor {name} shape mismatch")))?;
        Ok((name, tensor))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn serialize_payload(checkpoint: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    let model = &checkpoint.model;

    w.str(model.tagset.name());
    w.u32(model.tagset.classes().len() as u32);
    for class in model.tagset.classes() {
        w.str(class);
    }

    w.str(&model.merges.vocab_text());
    w.str(&model.merges.merges_text());

    let config = &model.encoder.config;
    w.u64(config.vocab_size as u64);
    w.u64(config.d_model as u64);
    w.u64(config.n_heads as u64);
    w.u64(config.n_layers as u64);
    w.u64(config.d_ff as u64);
    w.u64(config.max_len as u64);
    w.f64(config.dropout_rate);
    w.u64(config.seed);

    w.u64(checkpoint.epochs_done as u64);
    w.u32(checkpoint.history.len() as u32);
    for entry in &checkpoint.history {
        w.u64(entry.epoch as u64);
        w.f64(entry.train_loss);
        w.f64(entry.dev_f1);
    }
    w.u64(checkpoint.best.epoch as u64);
    w.f64(checkpoint.best.dev_f1);
    w.u64(checkpoint.optimizer.step);

    let mut tensors: Vec<(String, &Array2<f64>)> = Vec::new();
    for (name, tensor) in model.named_tensors() {
        tensors.push((format!("model.{name}"), tensor));
    }
    for (name, tensor) in checkpoint.best.encoder.named_tensors() {
        tensors.push((format!("best.encoder.{name}"), tensor));
    }
    tensors.push(("best.projection.weight".into(), &checkpoint.best.projection.weight));
    tensors.push(("best.projection.bias".into(), &checkpoint.best.projection.bias));
    tensors.push(("best.crf.trans".into(), &checkpoint.best.transitions.trans));
    tensors.push(("best.crf.start".into(), &checkpoint.best.transitions.start));
    tensors.push(("best.crf.stop".into(), &checkpoint.best.transitions.stop));
    for ((name, _), moment) in model
        .named_tensors()
        .iter()
        .zip(&checkpoint.optimizer.first_moments)
    {
        tensors.push((format!("opt.m.{name}"), moment));
    }
    for ((name, _), moment) in model
        .named_tensors()
        .iter()
        .zip(&checkpoint.optimizer.second_moments)
    {
        tensors.push((format!("opt.v.{name}"), moment));
    }

    w.u32(tensors.len() as u32);
    for (name, tensor) in tensors {
        w.tensor(&name, tensor);
    }
    w.buf
}

/// Writes the checkpoint to `path`.
pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let payload = serialize_payload(checkpoint);
    let mut file = Vec::with_capacity(payload.len() + 52);
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&VERSION.to_le_bytes());
    file.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    file.extend_from_slice(&Sha256::digest(&payload));
    file.extend_from_slice(&payload);
    std::fs::write(path, file)?;
    Ok(())
}

/// Reads a checkpoint, verifying magic, version, length, and checksum.
pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 52 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing or short header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let length = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload = &bytes[52..];
    if payload.len() != length {
        return Err(corrupt(format!(
            "payload length {} does not match header {length}",
            payload.len()
        )));
    }
    let digest = Sha256::digest(payload);
    if digest.as_slice() != &bytes[20..52] {
        return Err(corrupt("checksum mismatch"));
    }
    deserialize_payload(payload)
}

fn deserialize_payload(payload: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(payload);

    let tagset_name = r.str()?;
    let class_count = r.u32()? as usize;
    let mut classes = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        classes.push(r.str()?);
    }
    let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
    let tagset = Tagset::new(&tagset_name, &class_refs)
        .map_err(|e| corrupt(format!("bad tagset: {e}")))?;

    let vocab_text = r.str()?;
    let merges_text = r.str()?;
    let merges = MergeTable::from_text(&vocab_text, &merges_text)
        .map_err(|e| corrupt(format!("bad merge table: {e}")))?;

    let config = EncoderConfig {
        vocab_size: r.u64()? as usize,
        d_model: r.u64()? as usize,
        n_heads: r.u64()? as usize,
        n_layers: r.u64()? as usize,
        d_ff: r.u64()? as usize,
        max_len: r.u64()? as usize,
        dropout_rate: r.f64()?,
        seed: r.u64()?,
    };

    let epochs_done = r.u64()? as usize;
    let history_len = r.u32()? as usize;
    let mut history = Vec::with_capacity(history_len);
    for _ in 0..history_len {
        history.push(EpochMetrics {
            epoch: r.u64()? as usize,
            train_loss: r.f64()?,
            dev_f1: r.f64()?,
        });
    }
    let best_epoch = r.u64()? as usize;
    let best_dev_f1 = r.f64()?;
    let optimizer_step = r.u64()?;

    let tensor_count = r.u32()? as usize;
    let mut tensors: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    for _ in 0..tensor_count {
        let (name, tensor) = r.tensor()?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(corrupt(format!("duplicate tensor {name}")));
        }
    }
    if !r.done() {
        return Err(corrupt("trailing bytes after tensor section"));
    }

    let mut model = CrfModel::init(tagset, merges, config, false)
        .map_err(|e| corrupt(format!("cannot rebuild model shell: {e}")))?;
    let mut best = BestSnapshot {
        epoch: best_epoch,
        dev_f1: best_dev_f1,
        encoder: model.encoder.clone(),
        projection: model.projection.clone(),
        transitions: model.transitions.clone(),
    };
    let mut optimizer = AdamState::zeros(&model);
    optimizer.step = optimizer_step;

    let mut fill = |prefix: &str, slots: Vec<(String, &mut Array2<f64>)>| -> Result<(), CheckpointError> {
        for (name, slot) in slots {
            let key = format!("{prefix}{name}");
            let tensor = tensors
                .remove(&key)
                .ok_or_else(|| corrupt(format!("missing tensor {key}")))?;
            if tensor.raw_dim() != slot.raw_dim() {
                return Err(corrupt(format!(
                    "tensor {key}: expected {:?}, found {:?}",
                    slot.raw_dim(),
                    tensor.raw_dim()
                )));
            }
            *slot = tensor;
        }
        Ok(())
    };

    fill("model.", model.named_tensors_mut())?;
    fill(
        "best.encoder.",
        best.encoder
            .named_tensors_mut()
            .into_iter()
            .collect(),
    )?;
    fill(
        "best.",
        vec![
            ("projection.weight".to_string(), &mut best.projection.weight),
            ("projection.bias".to_string(), &mut best.projection.bias),
            ("crf.trans".to_string(), &mut best.transitions.trans),
            ("crf.start".to_string(), &mut best.transitions.start),
            ("crf.stop".to_string(), &mut best.transitions.stop),
        ],
    )?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    fill(
        "opt.m.",
        names
            .iter()
            .cloned()
            .zip(optimizer.first_moments.iter_mut())
            .collect(),
    )?;
    fill(
        "opt.v.",
        names
            .iter()
            .cloned()
            .zip(optimizer.second_moments.iter_mut())
            .collect(),
    )?;
    if let Some((name, _)) = tensors.into_iter().next() {
        return Err(corrupt(format!("unexpected tensor {name}")));
    }

    Ok(Checkpoint {
        model,
        optimizer,
        epochs_done,
        history,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, LabelId, TaggedSentence};
    use crate::tokenizer::{train_bpe, word_counts};
    use crate::trainer::{train, TrainConfig};

    fn trained_checkpoint() -> Checkpoint {
        let tagset = Tagset::new("t", &["PER"]).unwrap();
        let b = tagset.begin(0);
        let o = LabelId::OUTSIDE;
        let sentences = (0..8)
            .map(|i| {
                if i % 2 == 0 {
                    TaggedSentence::new(vec!["ana".into(), "ran".into()], vec![b, o]).unwrap()
                } else {
                    TaggedSentence::new(vec!["dog".into(), "ran".into()], vec![o, o]).unwrap()
                }
            })
            .collect();
        let corpus = Corpus::from_sentences(tagset, sentences, "tiny").unwrap();
        let merges = train_bpe(&word_counts(&corpus), 32).unwrap();
        let encoder_config = EncoderConfig {
            vocab_size: merges.vocab_size(),
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 12,
            max_len: 12,
            dropout_rate: 0.1,
            seed: 4,
        };
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            patience: 0,
            ..TrainConfig::default()
        };
        train(&corpus, None, merges, encoder_config, &config).unwrap()
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let checkpoint = trained_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&checkpoint, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, checkpoint);
        // Bit-exactness: re-serializing gives identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let checkpoint = trained_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&checkpoint, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
        // Too short for even a header.
        std::fs::write(&path, b"SQTG").unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let checkpoint = trained_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&checkpoint, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        match load(&path) {
            Err(CheckpointError::Corrupt(message)) => {
                assert!(message.contains("checksum"), "got {message}");
            }
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let checkpoint = trained_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&checkpoint, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::VersionMismatch { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load(Path::new("/nonexistent/model.ckpt")),
            Err(CheckpointError::Io(_))
        ));
    }
}
