use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::{uniform, ParamStore};
use super::train::EpochLog;
use super::vocab::{encode, Vocab};
use super::{bigru, transformer, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BigruAttn,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::BigruAttn, ModelKind::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BigruAttn => "bigru_attn",
            ModelKind::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Binary cross-entropy on a sigmoid output.
    Bce,
    /// Sparse categorical cross-entropy on a two-way softmax.
    Scce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// With a few hundred documents an epoch is only tens of Adam steps.
pub const DESK_LEARNING_RATE: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// M: maximum sequence length.
    pub max_len: usize,
    /// E: embedding width.
    pub embed_dim: usize,
    /// G: GRU hidden width per direction.
    pub hidden_dim: usize,
    /// D: dropout rate.
    pub dropout: f64,
    /// B: batch size.
    pub batch_size: usize,
    /// N: attention heads.
    pub heads: usize,
    /// Df: feed-forward projection width.
    pub ff_dim: usize,
    pub loss: LossKind,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Keep at most this many label-0 training documents.
    #[serde(default)]
    pub rest_subsample: Option<usize>,
}

impl ModelConfig {
    /// Small widths suitable for a few hundred documents on one core.
    pub fn desk(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            max_len: 64,
            embed_dim: 32,
            hidden_dim: 64,
            dropout: 0.2,
            batch_size: 4,
            heads: 2,
            ff_dim: 64,
            loss: match kind {
                ModelKind::BigruAttn => LossKind::Bce,
                ModelKind::Transformer => LossKind::Scce,
            },
            optimizer: AdamConfig {
                learning_rate: DESK_LEARNING_RATE,
                ..AdamConfig::default()
            },
            epochs: 5,
            seed: 0,
            rest_subsample: None,
        }
    }

    /// Full-size settings (M 512/1200, E 100, D 0.2, B 64).
    pub fn full_scale(kind: ModelKind) -> Self {
        ModelConfig {
            max_len: match kind {
                ModelKind::BigruAttn => 512,
                ModelKind::Transformer => 1200,
            },
            embed_dim: 100,
            batch_size: 64,
            heads: 4,
            optimizer: AdamConfig::default(),
            ..ModelConfig::desk(kind)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let fail = |m: String| Err(NnError::Config(m));
        if self.max_len == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return fail("max_len, embed_dim and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        match self.kind {
            ModelKind::BigruAttn => {
                if self.hidden_dim == 0 {
                    return fail("hidden_dim must be at least 1".into());
                }
                if self.loss != LossKind::Bce {
                    return fail("bigru_attn has a sigmoid output and trains with bce".into());
                }
            }
            ModelKind::Transformer => {
                if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
                    return fail(format!(
                        "embed_dim {} must be divisible by heads {}",
                        self.embed_dim, self.heads
                    ));
                }
                if self.ff_dim == 0 {
                    return fail("ff_dim must be at least 1".into());
                }
                if self.loss != LossKind::Scce {
                    return fail("transformer has a softmax output and trains with scce".into());
                }
            }
        }
        let o = &self.optimizer;
        if o.learning_rate <= 0.0 || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return fail("optimizer rates out of range".into());
        }
        Ok(())
    }
}

/// Model output for one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    Sigmoid(f64),
    Softmax([f64; 2]),
}

impl Output {
    /// Probability of label 1.
    pub fn positive(&self) -> f64 {
        match *self {
            Output::Sigmoid(p) => p,
            Output::Softmax(p) => p[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub training_log: Vec<EpochLog>,
}

pub(crate) const EMBED_INIT: f64 = 0.05;

/// Fresh parameters for `config.kind`, seeded by `config.seed`.
pub(crate) fn init_params(config: &ModelConfig, vocab_size: usize) -> Result<ParamStore, NnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    store.insert(
        "embedding",
        uniform(&mut rng, vocab_size, config.embed_dim, EMBED_INIT),
    );
    match config.kind {
        ModelKind::BigruAttn => bigru::init(&mut store, config, &mut rng),
        ModelKind::Transformer => transformer::init(&mut store, config, &mut rng)?,
    }
    Ok(store)
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Evaluation-mode forward pass (no dropout).
    pub fn forward(&self, seq: &[u32]) -> Result<Output, NnError> {
        if seq.len() != self.config.max_len {
            return Err(NnError::SequenceLength {
                expected: self.config.max_len,
                found: seq.len(),
            });
        }
        let vocab_size = self.params.get("embedding").nrows();
        if let Some(&bad) = seq.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(NnError::Format(format!("token id {bad} outside the vocabulary")));
        }
        Ok(match self.config.kind {
            ModelKind::BigruAttn => bigru::forward(&self.params, &self.config, seq, None).0,
            ModelKind::Transformer => transformer::forward(&self.params, &self.config, seq, None).0,
        })
    }

    pub fn predict_text(&self, text: &str) -> Result<f64, NnError> {
        let seq = encode(text, &self.vocab, self.config.max_len);
        Ok(self.forward(&seq)?.positive())
    }
}

/// Forward and backward for one example; gradients are added into `grads`.
pub(crate) fn loss_and_grad(
    params: &ParamStore,
    config: &ModelConfig,
    seq: &[u32],
    label: u8,
    dropout: Option<&mut ChaCha8Rng>,
    grads: &mut ParamStore,
) -> (f64, Output) {
    match config.kind {
        ModelKind::BigruAttn => bigru::loss_and_grad(params, config, seq, label, dropout, grads),
        ModelKind::Transformer => {
            transformer::loss_and_grad(params, config, seq, label, dropout, grads)
        }
    }
}

/// Loss without gradients, evaluation mode.
pub(crate) fn loss(params: &ParamStore, config: &ModelConfig, seq: &[u32], label: u8) -> (f64, Output) {
    match config.kind {
        ModelKind::BigruAttn => bigru::loss(params, config, seq, label),
        ModelKind::Transformer => transformer::loss(params, config, seq, label),
    }
}

/// Length of the unpadded prefix.
pub(crate) fn valid_len(seq: &[u32]) -> usize {
    seq.iter()
        .position(|&id| id == super::vocab::PAD_ID)
        .unwrap_or(seq.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk(ModelKind::BigruAttn).validate().is_ok());
        assert!(ModelConfig::full_scale(ModelKind::Transformer).validate().is_ok());
        let mut c = ModelConfig::desk(ModelKind::Transformer);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(ModelKind::BigruAttn);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(ModelKind::BigruAttn);
        c.loss = LossKind::Scce;
        assert!(c.validate().is_err());
    }

    #[test]
    fn valid_prefix_length() {
        assert_eq!(valid_len(&[5, 3, 0, 0]), 2);
        assert_eq!(valid_len(&[5, 3]), 2);
        assert_eq!(valid_len(&[0, 0]), 0);
    }
}
