//! Sequence-labeling toolkit built around a subword pipeline and a
//! linear-chain CRF head.
//!
//! The pipeline: CoNLL corpora are tokenized into BPE subwords, word
//! labels are aligned to first subwords (remaining subwords take the `X`
//! placeholder), a small bidirectional self-attention encoder produces
//! contextual representations, a fully-connected projection turns them
//! into per-label emission scores, and a linear-chain CRF scores and
//! decodes label paths over the supervised positions. Training uses
//! exact gradients throughout; evaluation reports CoNLL-style precision,
//! recall, and F1 at word and phrase level, with a k-fold
//! cross-validation harness on top.
//!
//! Every stochastic step (fold shuffling, parameter init, batch order,
//! dropout) is driven by seeded ChaCha8 streams, so identical seeds give
//! bit-identical results on the same platform.

pub mod checkpoint;
pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod eval;
pub mod rng;
pub mod tokenizer;
pub mod trainer;
