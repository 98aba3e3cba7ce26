//! Glue from corpora to conversation-level scores.

use crate::calibration::{calibrate_with, classify_with, Calibration, ChunkPredictions, ThresholdRule};
use crate::chunking::chunk_corpus;
use crate::corpus::Corpus;
use crate::embeddings::UtteranceEncoder;
use crate::error::Result;
use crate::metrics::{score, MetricSet};
use crate::models::{predict_encoded, EncodedSet, RecurrentChunkModel};

pub fn encode_corpus(corpus: &Corpus, encoder: &UtteranceEncoder, window: usize, stride: usize) -> Result<EncodedSet> {
    EncodedSet::from_chunks(&chunk_corpus(corpus, window, stride)?, encoder)
}

/// Chunk predictions grouped by conversation, in first-seen order.
pub fn conversation_predictions(model: &RecurrentChunkModel, set: &EncodedSet) -> Result<Vec<ChunkPredictions>> {
    let preds = predict_encoded(model, set)?;
    let mut out: Vec<ChunkPredictions> = set
        .conversation_ids
        .iter()
        .zip(&set.conversation_labels)
        .map(|(id, &label)| ChunkPredictions {
            conversation_id: id.clone(),
            predictions: Vec::new(),
            label,
        })
        .collect();
    for (span, p) in set.spans.iter().zip(preds) {
        out[span.conversation].predictions.push(p.label);
    }
    Ok(out)
}

pub fn calibrate_model(model: &RecurrentChunkModel, valid: &EncodedSet, rule: ThresholdRule) -> Result<Calibration> {
    calibrate_with(&conversation_predictions(model, valid)?, rule)
}

/// Conversation verdict labels and true labels.
pub fn verdicts(preds: &[ChunkPredictions], threshold: f64, rule: ThresholdRule) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut predicted = Vec::with_capacity(preds.len());
    for p in preds {
        predicted.push(classify_with(p, threshold, rule)?.label());
    }
    Ok((predicted, preds.iter().map(|p| p.label).collect()))
}

pub fn evaluate_model(model: &RecurrentChunkModel, set: &EncodedSet, threshold: f64, rule: ThresholdRule) -> Result<MetricSet> {
    let (p, t) = verdicts(&conversation_predictions(model, set)?, threshold, rule)?;
    score(&p, &t)
}
