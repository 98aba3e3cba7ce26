//! Turning chunk verdicts into a conversation verdict, and choosing the
//! decision threshold on validation data.
//!
//! The default statistic is the share of chunks predicted positive; a
//! conversation is flagged iff that share is strictly above the threshold.
//! The alternative [`ThresholdRule::LiteralRatio`] thresholds the
//! negative-to-positive count ratio instead (infinite when no chunk is
//! positive), which orders conversations the opposite way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chunking::Chunk;
use crate::embeddings::UtteranceEncoder;
use crate::error::{Error, Result};
use crate::models::{predict_chunks, RecurrentChunkModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPredictions {
    pub conversation_id: String,
    pub predictions: Vec<u8>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    NonDepressed,
    Depressed,
}

impl Verdict {
    pub fn label(self) -> u8 {
        match self {
            Verdict::NonDepressed => 0,
            Verdict::Depressed => 1,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NonDepressed => "non-depressed",
            Verdict::Depressed => "depressed",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdRule {
    /// positive chunks / all chunks
    #[default]
    #[serde(rename = "fraction")]
    Fraction,
    /// negative chunks / positive chunks
    #[serde(rename = "literal-eq4")]
    LiteralRatio,
}

impl ThresholdRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdRule::Fraction => "fraction",
            ThresholdRule::LiteralRatio => "literal-eq4",
        }
    }

    pub fn statistic_from_counts(self, positives: usize, total: usize) -> f64 {
        match self {
            ThresholdRule::Fraction => positives as f64 / total as f64,
            ThresholdRule::LiteralRatio => {
                if positives == 0 {
                    f64::INFINITY
                } else {
                    (total - positives) as f64 / positives as f64
                }
            }
        }
    }

    pub fn statistic(self, preds: &ChunkPredictions) -> f64 {
        let positives = preds.predictions.iter().filter(|&&p| p == 1).count();
        self.statistic_from_counts(positives, preds.predictions.len())
    }
}

impl fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fraction" => Ok(ThresholdRule::Fraction),
            "literal-eq4" => Ok(ThresholdRule::LiteralRatio),
            other => Err(Error::invalid(format!("unknown threshold rule `{other}`"))),
        }
    }
}

/// Share of chunks predicted 1. `preds` must hold at least one chunk.
pub fn positive_fraction(preds: &ChunkPredictions) -> f64 {
    ThresholdRule::Fraction.statistic(preds)
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("threshold must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Depressed iff the rule's statistic is strictly greater than `threshold`.
pub fn classify_with(preds: &ChunkPredictions, threshold: f64, rule: ThresholdRule) -> Result<Verdict> {
    check_threshold(threshold)?;
    if preds.predictions.is_empty() {
        return Err(Error::invalid(format!("conversation `{}` has no chunks", preds.conversation_id)));
    }
    Ok(if rule.statistic(preds) > threshold {
        Verdict::Depressed
    } else {
        Verdict::NonDepressed
    })
}

pub fn classify_conversation(preds: &ChunkPredictions, threshold: f64) -> Result<Verdict> {
    classify_with(preds, threshold, ThresholdRule::Fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Candidate thresholds: `{0, 1}` plus midpoints between consecutive distinct
/// statistic values, restricted to `[0, 1]`, ascending.
pub fn candidate_thresholds(stats: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.retain(|t| (0.0..=1.0).contains(t));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates
}

/// Exhaustive threshold sweep maximizing validation accuracy; ties go to the
/// smallest threshold.
pub fn calibrate_with(validation: &[ChunkPredictions], rule: ThresholdRule) -> Result<Calibration> {
    for class in 0..2u8 {
        if !validation.iter().any(|p| p.label == class) {
            return Err(Error::MissingClass {
                split: "validation".into(),
                class,
            });
        }
    }
    if let Some(p) = validation.iter().find(|p| p.predictions.is_empty()) {
        return Err(Error::invalid(format!("conversation `{}` has no chunks", p.conversation_id)));
    }
    let mut scored: Vec<(f64, u8)> = validation.iter().map(|p| (rule.statistic(p), p.label)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let stats: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let positives_total = scored.iter().filter(|s| s.1 == 1).count();
    let n = scored.len() as f64;

    // walk candidates upward; `below` counts items with statistic <= t
    let mut below = 0;
    let mut below_neg = 0;
    let mut below_pos = 0;
    let mut best: Option<Calibration> = None;
    for t in candidate_thresholds(&stats) {
        while below < scored.len() && scored[below].0 <= t {
            if scored[below].1 == 1 {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            below += 1;
        }
        let correct = below_neg + (positives_total - below_pos);
        let accuracy = correct as f64 / n;
        if best.map_or(true, |b| accuracy > b.accuracy) {
            best = Some(Calibration { threshold: t, accuracy });
        }
    }
    Ok(best.expect("candidate set is never empty"))
}

pub fn calibrate_threshold(validation: &[ChunkPredictions]) -> Result<Calibration> {
    calibrate_with(validation, ThresholdRule::Fraction)
}

/// A chunk model with its calibrated conversation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedClassifier {
    pub model: RecurrentChunkModel,
    pub threshold: f64,
    pub rule: ThresholdRule,
}

impl CalibratedClassifier {
    pub fn new(model: RecurrentChunkModel, threshold: f64, rule: ThresholdRule) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(CalibratedClassifier { model, threshold, rule })
    }

    pub fn classify(&self, preds: &ChunkPredictions) -> Result<Verdict> {
        classify_with(preds, self.threshold, self.rule)
    }

    /// Predicts every chunk of one conversation and aggregates.
    pub fn classify_chunks(&self, chunks: &[Chunk], encoder: &UtteranceEncoder) -> Result<Verdict> {
        let first = chunks
            .first()
            .ok_or_else(|| Error::invalid("no chunks to classify"))?;
        let preds = ChunkPredictions {
            conversation_id: first.conversation_id.clone(),
            predictions: predict_chunks(&self.model, chunks, encoder)?
                .into_iter()
                .map(|p| p.label)
                .collect(),
            label: first.label,
        };
        self.classify(&preds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamUpdate {
    pub chunks: usize,
    pub positive_fraction: f64,
    pub verdict: Verdict,
}

/// Running verdict over chunk predictions as they arrive. Keeps counts only.
#[derive(Debug, Clone)]
pub struct StreamVerdict {
    threshold: f64,
    rule: ThresholdRule,
    positives: usize,
    total: usize,
}

impl StreamVerdict {
    /// `None` means the classifier was never calibrated.
    pub fn new(threshold: Option<f64>, rule: ThresholdRule) -> Result<Self> {
        let threshold = threshold.ok_or(Error::Uncalibrated)?;
        check_threshold(threshold)?;
        Ok(StreamVerdict {
            threshold,
            rule,
            positives: 0,
            total: 0,
        })
    }

    pub fn feed(&mut self, prediction: u8) -> StreamUpdate {
        self.total += 1;
        self.positives += usize::from(prediction == 1);
        let verdict = if self.rule.statistic_from_counts(self.positives, self.total) > self.threshold {
            Verdict::Depressed
        } else {
            Verdict::NonDepressed
        };
        StreamUpdate {
            chunks: self.total,
            positive_fraction: self.positives as f64 / self.total as f64,
            verdict,
        }
    }
}
