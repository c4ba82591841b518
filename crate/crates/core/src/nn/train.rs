use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{init_params, loss, loss_and_grad, AdamConfig, ModelConfig, TrainedModel};
use super::store::ParamStore;
use super::vocab::{encode, Vocab};
use super::NnError;
use crate::metrics::{confusion, prf1, Confusion};

/// One encoded document.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: String,
    pub ids: Vec<u32>,
    pub label: u8,
}

impl Example {
    pub fn encode(doc_id: impl Into<String>, text: &str, label: u8, vocab: &Vocab, max_len: usize) -> Self {
        Example {
            doc_id: doc_id.into(),
            ids: encode(text, vocab, max_len),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example loss over the epoch's batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    #[serde(default)]
    pub valid_loss: Option<f64>,
    #[serde(default)]
    pub valid_f1: Option<f64>,
}

/// Evaluation-mode results on a labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub mean_loss: f64,
    pub probabilities: Vec<f64>,
    pub confusion: Confusion,
    pub f1: f64,
}

struct Adam {
    cfg: AdamConfig,
    m: ParamStore,
    v: ParamStore,
    step: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, params: &ParamStore) -> Self {
        Adam {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name);
            let m = self.m.get_mut(name);
            m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
            let v = self.v.get_mut(name);
            v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            let (m, v) = (self.m.get(name), self.v.get(name));
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= learning_rate * (m / c1) / ((v / c2).sqrt() + epsilon);
            });
        }
    }
}

fn check_examples(config: &ModelConfig, examples: &[Example]) -> Result<(), NnError> {
    if examples.is_empty() {
        return Err(NnError::EmptyTrainingSet);
    }
    for ex in examples {
        if ex.ids.len() != config.max_len {
            return Err(NnError::SequenceLength {
                expected: config.max_len,
                found: ex.ids.len(),
            });
        }
    }
    Ok(())
}

/// Keeps every label-1 example and the first `cap` label-0 examples after a
/// seeded shuffle.
fn subsample_rest(examples: &[Example], cap: Option<usize>, seed: u64) -> Vec<&Example> {
    let mut chosen: Vec<&Example> = examples.iter().collect();
    if let Some(cap) = cap {
        let mut rest: Vec<&Example> = examples.iter().filter(|e| e.label == 0).collect();
        if rest.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            rest.shuffle(&mut rng);
            rest.truncate(cap);
            let keep: std::collections::HashSet<*const Example> =
                rest.into_iter().map(|e| e as *const Example).collect();
            chosen.retain(|e| e.label == 1 || keep.contains(&(*e as *const Example)));
        }
    }
    chosen
}

/// Mini-batch Adam training. Every random draw comes from one ChaCha8
/// stream seeded by `config.seed`, so equal inputs give bit-identical
/// models.
pub fn train(
    config: &ModelConfig,
    vocab: Vocab,
    train_set: &[Example],
    valid_set: Option<&[Example]>,
) -> Result<TrainedModel, NnError> {
    config.validate()?;
    check_examples(config, train_set)?;
    if let Some(v) = valid_set {
        if !v.is_empty() {
            check_examples(config, v)?;
        }
    }
    let mut pool = subsample_rest(train_set, config.rest_subsample, config.seed);
    let positives = pool.iter().filter(|e| e.label == 1).count();
    if positives == 0 {
        return Err(NnError::SingleClass(0));
    }
    if positives == pool.len() {
        return Err(NnError::SingleClass(1));
    }
    let vocab_size = vocab.size();
    if let Some(bad) = pool.iter().flat_map(|e| e.ids.iter()).find(|&&id| id as usize >= vocab_size) {
        return Err(NnError::Format(format!("token id {bad} outside the vocabulary")));
    }

    let mut params = init_params(config, vocab_size)?;
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(config.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        pool.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in pool.chunks(config.batch_size) {
            grads.fill_zero();
            for ex in batch {
                let (l, out) = loss_and_grad(&params, config, &ex.ids, ex.label, Some(&mut rng), &mut grads);
                total_loss += l;
                if (out.positive() >= 0.5) == (ex.label == 1) {
                    correct += 1;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.update(&mut params, &grads);
        }
        let mut entry = EpochLog {
            epoch,
            train_loss: total_loss / pool.len() as f64,
            train_accuracy: correct as f64 / pool.len() as f64,
            valid_loss: None,
            valid_f1: None,
        };
        if let Some(v) = valid_set.filter(|v| !v.is_empty()) {
            let res = evaluate_params(&params, config, v);
            entry.valid_loss = Some(res.mean_loss);
            entry.valid_f1 = Some(res.f1);
        }
        info!(
            "{} epoch {epoch}: loss {:.4} acc {:.3} valid_f1 {:?}",
            config.kind, entry.train_loss, entry.train_accuracy, entry.valid_f1
        );
        log.push(entry);
    }
    Ok(TrainedModel {
        config: config.clone(),
        vocab,
        params,
        training_log: log,
    })
}

fn evaluate_params(params: &ParamStore, config: &ModelConfig, examples: &[Example]) -> TrainOutcome {
    let mut total = 0.0;
    let mut probs = Vec::with_capacity(examples.len());
    for ex in examples {
        let (l, out) = loss(params, config, &ex.ids, ex.label);
        total += l;
        probs.push(out.positive());
    }
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let conf = confusion(&probs, &labels, 0.5).expect("lengths agree");
    TrainOutcome {
        mean_loss: total / examples.len().max(1) as f64,
        f1: prf1(&conf).f1,
        probabilities: probs,
        confusion: conf,
    }
}

/// Evaluation-mode loss, probabilities and positive-class F1 at 0.5.
pub fn evaluate(model: &TrainedModel, examples: &[Example]) -> Result<TrainOutcome, NnError> {
    check_examples(&model.config, examples)?;
    Ok(evaluate_params(&model.params, &model.config, examples))
}
