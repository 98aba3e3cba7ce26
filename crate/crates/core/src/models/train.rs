//! Mini-batch Adam training of [`RecurrentChunkModel`] with gradient clipping
//! and validation early stopping, plus batch prediction.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recurrent::{bce_with_logit, RecurrentChunkModel};
use crate::chunking::Chunk;
use crate::embeddings::UtteranceEncoder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    /// Weight each class by `n / (2 n_c)` in the loss.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 32,
            patience: 5,
            clip_norm: 5.0,
            class_weighting: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden_dim: usize,
    pub attention: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden_dim: 128,
            attention: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub conversation: usize,
    pub start: usize,
    pub len: usize,
    pub label: u8,
}

/// Chunks with their utterances encoded once per conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSet {
    pub dim: usize,
    pub conversation_ids: Vec<String>,
    pub conversation_labels: Vec<u8>,
    rows: Vec<Vec<f64>>,
    pub spans: Vec<Span>,
}

impl EncodedSet {
    pub fn from_chunks(chunks: &[Chunk], encoder: &UtteranceEncoder) -> Result<Self> {
        let dim = encoder.dim();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut conversation_ids = Vec::new();
        let mut conversation_labels = Vec::new();
        let mut cached: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
        let mut spans = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            if chunk.utterances.is_empty() {
                return Err(Error::invalid(format!("empty chunk in `{}`", chunk.conversation_id)));
            }
            let ci = *index.entry(chunk.conversation_id.as_str()).or_insert_with(|| {
                conversation_ids.push(chunk.conversation_id.clone());
                conversation_labels.push(chunk.label);
                cached.push(Vec::new());
                cached.len() - 1
            });
            let slots = &mut cached[ci];
            for u in &chunk.utterances {
                if slots.len() <= u.index {
                    slots.resize(u.index + 1, None);
                }
                if slots[u.index].is_none() {
                    slots[u.index] = Some(encoder.encode(&chunk.conversation_id, u)?);
                }
            }
            spans.push(Span {
                conversation: ci,
                start: chunk.utterances[0].index,
                len: chunk.utterances.len(),
                label: chunk.label,
            });
        }
        let rows = cached
            .into_iter()
            .map(|slots| {
                let mut flat = Vec::with_capacity(slots.len() * dim);
                for s in slots {
                    match s {
                        Some(v) => flat.extend(v),
                        None => flat.extend(std::iter::repeat(0.0).take(dim)),
                    }
                }
                flat
            })
            .collect();
        Ok(EncodedSet {
            dim,
            conversation_ids,
            conversation_labels,
            rows,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Row-major `len x dim` inputs of one chunk.
    pub fn inputs(&self, span: &Span) -> &[f64] {
        &self.rows[span.conversation][span.start * self.dim..(span.start + span.len) * self.dim]
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.spans {
            c[s.label as usize] += 1;
        }
        c
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Validation loss of the starting parameters.
    pub initial_valid_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = starting parameters).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn class_weights(counts: [usize; 2], enabled: bool) -> [f64; 2] {
    if !enabled {
        return [1.0, 1.0];
    }
    let n = (counts[0] + counts[1]) as f64;
    [n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)]
}

/// Mean weighted loss and 0.5-threshold accuracy over a set.
pub fn evaluate_set(model: &RecurrentChunkModel, set: &EncodedSet, weights: [f64; 2]) -> Result<(f64, f64)> {
    let outcomes: Vec<(f64, bool)> = set
        .spans
        .par_iter()
        .map(|s| {
            let t = model.forward(set.inputs(s))?;
            let loss = weights[s.label as usize] * bce_with_logit(t.logit, s.label);
            Ok((loss, u8::from(t.probability > 0.5) == s.label))
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len().max(1) as f64;
    let loss = outcomes.iter().map(|o| o.0).sum::<f64>() / n;
    let acc = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    Ok((loss, acc))
}

/// Continues training `model` in place. Used for both fresh training and fine-tuning.
///
/// Early stopping tracks validation loss starting from the initial
/// parameters; the best parameters seen are restored at the end.
pub fn fit(model: &mut RecurrentChunkModel, train: &EncodedSet, valid: &EncodedSet, config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    if train.dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: train.dim,
        });
    }
    if !valid.is_empty() && valid.dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: valid.dim,
        });
    }
    let counts = train.label_counts();
    for class in 0..2u8 {
        if counts[class as usize] == 0 {
            return Err(Error::MissingClass {
                split: "train chunks".into(),
                class,
            });
        }
    }
    let weights = class_weights(counts, config.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model.param_count());

    let mut log = TrainingLog::default();
    let mut best_loss = if valid.is_empty() {
        None
    } else {
        Some(evaluate_set(model, valid, weights)?.0)
    };
    log.initial_valid_loss = best_loss;
    let mut best_params = model.params().to_vec();
    let mut waiting = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let model_ref = &*model;
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train.spans[i];
                    model_ref.loss_and_grad(train.inputs(s), s.label, weights[s.label as usize])
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; model.param_count()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_global_norm(&mut grad, config.clip_norm);
            adam.step(model.params_mut(), &grad, config.learning_rate);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let (valid_loss, valid_accuracy) = if valid.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_set(model, valid, weights)?;
            (Some(l), Some(a))
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            valid_accuracy,
        });
        match (valid_loss, best_loss) {
            (Some(l), Some(best)) if l < best => {
                best_loss = Some(l);
                best_params.copy_from_slice(model.params());
                log.best_epoch = epoch;
                waiting = 0;
            }
            (Some(_), Some(_)) => {
                waiting += 1;
                if waiting > config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
            _ => {
                best_params.copy_from_slice(model.params());
                log.best_epoch = epoch;
            }
        }
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(log)
}

/// Fresh model from seeded init, trained on `train` chunks with early stopping on `valid`.
pub fn train_chunk_model(
    train: &[Chunk],
    valid: &[Chunk],
    encoder: &UtteranceEncoder,
    arch: &ArchConfig,
    config: &TrainConfig,
) -> Result<(RecurrentChunkModel, TrainingLog)> {
    let train = EncodedSet::from_chunks(train, encoder)?;
    let valid = EncodedSet::from_chunks(valid, encoder)?;
    train_encoded(&train, &valid, arch, config)
}

pub fn train_encoded(
    train: &EncodedSet,
    valid: &EncodedSet,
    arch: &ArchConfig,
    config: &TrainConfig,
) -> Result<(RecurrentChunkModel, TrainingLog)> {
    let mut model = RecurrentChunkModel::new(train.dim, arch.hidden_dim, arch.attention, config.seed)?;
    let log = fit(&mut model, train, valid, config)?;
    Ok((model, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkPrediction {
    pub probability: f64,
    /// 1 iff `probability > 0.5`.
    pub label: u8,
}

impl ChunkPrediction {
    pub fn from_probability(probability: f64) -> Self {
        ChunkPrediction {
            probability,
            label: u8::from(probability > 0.5),
        }
    }
}

pub fn predict_encoded(model: &RecurrentChunkModel, set: &EncodedSet) -> Result<Vec<ChunkPrediction>> {
    set.spans
        .par_iter()
        .map(|s| model.predict_proba(set.inputs(s)).map(ChunkPrediction::from_probability))
        .collect()
}

/// Per-chunk probabilities and 0.5-threshold labels, in chunk order.
pub fn predict_chunks(model: &RecurrentChunkModel, chunks: &[Chunk], encoder: &UtteranceEncoder) -> Result<Vec<ChunkPrediction>> {
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    predict_encoded(model, &EncodedSet::from_chunks(chunks, encoder)?)
}
