//! One-vs-rest attention classifiers with hand-written backpropagation.
//!
//! Two architectures share the same vocabulary, parameter store, optimizer
//! and model file:
//!
//! * `bigru_attn`: embeddings, a bidirectional GRU, attention pooling with
//!   a learned query, and a sigmoid output trained with binary
//!   cross-entropy.
//! * `transformer`: embeddings plus sinusoidal positions, one encoder
//!   block (multi-head self-attention, residual + layer norm, feed-forward,
//!   residual + layer norm), masked mean pooling and a two-way softmax
//!   trained with sparse categorical cross-entropy.
//!
//! Everything runs in `f64`.

mod attention;
mod bigru;
pub mod gradcheck;
mod gru;
mod io;
mod layers;
mod model;
mod store;
mod train;
mod transformer;
mod vocab;

use thiserror::Error;

pub use attention::{
    multi_head, multi_head_backward, scaled_dot_attention, scaled_dot_attention_backward,
    softmax_rows, AttentionGrads, AttentionOutput, MultiHeadCache, MultiHeadGrads,
    MultiHeadParams,
};
pub use gru::{
    bigru_backward, bigru_encode, gru_cell, gru_cell_backward, BiGruCache, GruParams, GruStep,
};
pub use io::{load_model, read_model, save_model, write_model};
pub use layers::{bce_with_logit, layer_norm, layer_norm_backward, positional_encoding, sigmoid};
pub use model::{
    AdamConfig, LossKind, ModelConfig, ModelKind, Output, TrainedModel,
};
pub use store::{ParamStore, Tensor};
pub use train::{evaluate, train, EpochLog, Example, TrainOutcome};
pub use gradcheck::{grad_check, relative_error, GradComponent};
pub use vocab::{build_vocab, encode, Vocab, OOV_ID, PAD_ID};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("key dimension must be positive")]
    ZeroKeyDim,
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence length {found} does not match max length {expected}")]
    SequenceLength { expected: usize, found: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("training set has a single class ({0}); one-vs-rest training needs both")]
    SingleClass(u8),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(what: impl Into<String>, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> NnError {
    NnError::Shape {
        what: what.into(),
        expected: format!("{expected:?}"),
        found: format!("{found:?}"),
    }
}
