//! Training and evaluation engine for dual-view hierarchical attention
//! sentiment models.
//!
//! A review is encoded twice by separate hierarchical BiLSTM encoders: once
//! with attention conditioned on the review's author, once with attention
//! conditioned on the reviewed product. The two document vectors are
//! concatenated for the final classifier, and two auxiliary classifiers on
//! the individual views shape the representations through a weighted
//! three-term cross-entropy loss. Prediction always reads the combined head.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode differentiation engine and gradient checker
//! - [`model`]: encoders, attention pooling, heads, loss, checkpoints
//! - [`data`]: corpus parsing, vocabulary, encoding, embeddings, synthetic data
//! - [`training`]: Adam, the epoch loop, accuracy/RMSE
//! - [`cli`]: the `huapa` binary: train / eval / attn-export / gen-corpus

pub mod autodiff;
pub mod data;
pub mod model;
pub mod training;
pub mod cli;
