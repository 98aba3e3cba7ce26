//! Two-phase sequential transfer (train on a source corpus, continue on the
//! target at a reduced learning rate), the three-mode experiment harness
//! and seeded random hyperparameter search.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::ThresholdRule;
use crate::corpus::Corpus;
use crate::embeddings::UtteranceEncoder;
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::models::{fit, train_encoded, ArchConfig, EncodedSet, RecurrentChunkModel, TrainConfig, TrainingLog};
use crate::pipeline::{calibrate_model, encode_corpus, evaluate_model};

pub const DEFAULT_FINETUNE_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "target-only")]
    TargetOnly,
    #[serde(rename = "source-no-finetune")]
    SourceNoFinetune,
    #[serde(rename = "source+finetune")]
    SourceFinetune,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::TargetOnly, Mode::SourceNoFinetune, Mode::SourceFinetune];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TargetOnly => "target-only",
            Mode::SourceNoFinetune => "source-no-finetune",
            Mode::SourceFinetune => "source+finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct TransferPlan {
    pub source_train: Corpus,
    pub source_valid: Corpus,
    pub target_train: Corpus,
    pub target_valid: Corpus,
    pub target_test: Corpus,
    pub encoder: UtteranceEncoder,
    pub arch: ArchConfig,
    pub window: usize,
    pub stride: usize,
    pub pretrain: TrainConfig,
    /// Fine-tuning learning rate = pretrain rate x factor.
    pub finetune_factor: f64,
    pub finetune_epochs: usize,
    /// Providers carry no trainable state; must stay `true`.
    pub freeze_embeddings: bool,
    pub rule: ThresholdRule,
    pub model_label: String,
    pub seed: u64,
}

impl TransferPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.finetune_factor > 0.0 && self.finetune_factor <= 1.0) {
            return Err(Error::invalid(format!(
                "fine-tune factor must lie in (0, 1], got {}",
                self.finetune_factor
            )));
        }
        if !self.freeze_embeddings {
            return Err(Error::invalid("embedding providers are frozen; trainable embeddings are not supported"));
        }
        self.pretrain.validate()
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.pretrain.learning_rate * self.finetune_factor,
            max_epochs: self.finetune_epochs,
            seed: self.seed.wrapping_add(1),
            ..self.pretrain.clone()
        }
    }

    pub fn snapshot(&self) -> PlanSnapshot {
        PlanSnapshot {
            model: self.model_label.clone(),
            encoder: self.encoder.descriptor(),
            arch: self.arch,
            window: self.window,
            stride: self.stride,
            pretrain: self.pretrain_config(),
            finetune: self.finetune_config(),
            finetune_factor: self.finetune_factor,
            rule: self.rule,
            source: [self.source_train.len(), self.source_valid.len()],
            target: [self.target_train.len(), self.target_valid.len(), self.target_test.len()],
            seed: self.seed,
        }
    }
}

/// Serializable description of a plan, minus the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub model: String,
    pub encoder: String,
    pub arch: ArchConfig,
    pub window: usize,
    pub stride: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub finetune_factor: f64,
    pub rule: ThresholdRule,
    /// train, valid conversation counts
    pub source: [usize; 2],
    /// train, valid, test conversation counts
    pub target: [usize; 3],
    pub seed: u64,
}

impl PlanSnapshot {
    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("snapshot serializes");
        hex::encode(Sha256::digest(json))[..12].to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataRole {
    SourceTrain,
    SourceValid,
    TargetTrain,
    TargetValid,
    TargetTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Fit,
    EarlyStop,
    Calibrate,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Access {
    pub role: DataRole,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub model: String,
    pub mode: Mode,
    pub seed: u64,
    pub valid: MetricSet,
    pub test: MetricSet,
    pub threshold: f64,
    pub calibration_accuracy: f64,
    pub param_hash: String,
    pub config: PlanSnapshot,
    pub config_hash: String,
    /// Kept out of serialized reports so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock: Duration,
    #[serde(skip)]
    pub access: Vec<Access>,
}

/// Encoded data for one plan plus the audit trail of which split was used for what.
pub struct Harness<'a> {
    plan: &'a TransferPlan,
    source_train: EncodedSet,
    source_valid: EncodedSet,
    target_train: EncodedSet,
    target_valid: EncodedSet,
    target_test: EncodedSet,
    access: Vec<Access>,
    pretrained: Option<(RecurrentChunkModel, TrainingLog)>,
}

impl<'a> Harness<'a> {
    pub fn new(plan: &'a TransferPlan) -> Result<Self> {
        plan.validate()?;
        let enc = |c: &Corpus| encode_corpus(c, &plan.encoder, plan.window, plan.stride);
        Ok(Harness {
            plan,
            source_train: enc(&plan.source_train)?,
            source_valid: enc(&plan.source_valid)?,
            target_train: enc(&plan.target_train)?,
            target_valid: enc(&plan.target_valid)?,
            target_test: enc(&plan.target_test)?,
            access: Vec::new(),
            pretrained: None,
        })
    }

    fn touch(&mut self, role: DataRole, purpose: Purpose) {
        self.access.push(Access { role, purpose });
    }

    pub fn access_log(&self) -> &[Access] {
        &self.access
    }

    /// Source training until early stop on source validation loss. Cached.
    pub fn pretrain(&mut self) -> Result<(RecurrentChunkModel, TrainingLog)> {
        if let Some(p) = &self.pretrained {
            return Ok(p.clone());
        }
        if self.source_train.is_empty() {
            return Err(Error::invalid("source training split is empty"));
        }
        self.touch(DataRole::SourceTrain, Purpose::Fit);
        self.touch(DataRole::SourceValid, Purpose::EarlyStop);
        let out = train_encoded(&self.source_train, &self.source_valid, &self.plan.arch, &self.plan.pretrain_config())?;
        self.pretrained = Some(out.clone());
        Ok(out)
    }

    /// Continues training on the target split at the reduced learning rate.
    pub fn fine_tune(&mut self, model: &RecurrentChunkModel) -> Result<(RecurrentChunkModel, TrainingLog)> {
        if model.input_dim() != self.target_train.dim {
            return Err(Error::DimensionMismatch {
                expected: self.target_train.dim,
                actual: model.input_dim(),
            });
        }
        self.touch(DataRole::TargetTrain, Purpose::Fit);
        self.touch(DataRole::TargetValid, Purpose::EarlyStop);
        let mut tuned = model.clone();
        let log = fit(&mut tuned, &self.target_train, &self.target_valid, &self.plan.finetune_config())?;
        Ok((tuned, log))
    }

    fn train_target_only(&mut self) -> Result<RecurrentChunkModel> {
        self.touch(DataRole::TargetTrain, Purpose::Fit);
        self.touch(DataRole::TargetValid, Purpose::EarlyStop);
        Ok(train_encoded(&self.target_train, &self.target_valid, &self.plan.arch, &self.plan.pretrain_config())?.0)
    }

    pub fn run(&mut self, mode: Mode) -> Result<ExperimentResult> {
        let started = Instant::now();
        let mark = self.access.len();
        let model = match mode {
            Mode::TargetOnly => self.train_target_only()?,
            Mode::SourceNoFinetune => self.pretrain()?.0,
            Mode::SourceFinetune => {
                let (pretrained, _) = self.pretrain()?;
                self.fine_tune(&pretrained)?.0
            }
        };
        self.touch(DataRole::TargetValid, Purpose::Calibrate);
        let calibration = calibrate_model(&model, &self.target_valid, self.plan.rule)?;
        self.touch(DataRole::TargetValid, Purpose::Evaluate);
        let valid = evaluate_model(&model, &self.target_valid, calibration.threshold, self.plan.rule)?;
        self.touch(DataRole::TargetTest, Purpose::Evaluate);
        let test = evaluate_model(&model, &self.target_test, calibration.threshold, self.plan.rule)?;
        let snapshot = self.plan.snapshot();
        Ok(ExperimentResult {
            model: self.plan.model_label.clone(),
            mode,
            seed: self.plan.seed,
            valid,
            test,
            threshold: calibration.threshold,
            calibration_accuracy: calibration.accuracy,
            param_hash: model.param_hash(),
            config_hash: snapshot.hash(),
            config: snapshot,
            wall_clock: started.elapsed(),
            access: self.access[mark..].to_vec(),
        })
    }
}

pub fn pretrain(plan: &TransferPlan) -> Result<(RecurrentChunkModel, TrainingLog)> {
    Harness::new(plan)?.pretrain()
}

pub fn fine_tune(model: &RecurrentChunkModel, plan: &TransferPlan) -> Result<(RecurrentChunkModel, TrainingLog)> {
    Harness::new(plan)?.fine_tune(model)
}

pub fn run_experiment(plan: &TransferPlan, mode: Mode) -> Result<ExperimentResult> {
    Harness::new(plan)?.run(mode)
}

/// Runs several modes on one plan, pretraining at most once.
pub fn run_modes(plan: &TransferPlan, modes: &[Mode]) -> Result<Vec<ExperimentResult>> {
    let mut h = Harness::new(plan)?;
    modes.iter().map(|&m| h.run(m)).collect()
}

/// Named ranges to sample from. `None` keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub learning_rate: Option<(f64, f64)>,
    pub hidden_dim: Option<(usize, usize)>,
    pub window: Option<(usize, usize)>,
    pub batch_size: Option<(usize, usize)>,
    pub patience: Option<(usize, usize)>,
    pub max_epochs: Option<(usize, usize)>,
    pub clip_norm: Option<(f64, f64)>,
}

impl SearchSpace {
    fn is_empty(&self) -> bool {
        self.learning_rate.is_none()
            && self.hidden_dim.is_none()
            && self.window.is_none()
            && self.batch_size.is_none()
            && self.patience.is_none()
            && self.max_epochs.is_none()
            && self.clip_norm.is_none()
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("search space is empty"));
        }
        if let Some((lo, hi)) = self.learning_rate {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::invalid(format!("bad learning-rate range ({lo}, {hi})")));
            }
        }
        if let Some((lo, hi)) = self.clip_norm {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::invalid(format!("bad clip-norm range ({lo}, {hi})")));
            }
        }
        for (name, r, min) in [
            ("hidden_dim", self.hidden_dim, 1),
            ("window", self.window, 1),
            ("batch_size", self.batch_size, 1),
            ("patience", self.patience, 0),
            ("max_epochs", self.max_epochs, 0),
        ] {
            if let Some((lo, hi)) = r {
                if lo < min || lo > hi {
                    return Err(Error::invalid(format!("bad {name} range ({lo}, {hi})")));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, base: &TrialConfig, rng: &mut ChaCha8Rng) -> TrialConfig {
        let mut c = base.clone();
        if let Some((lo, hi)) = self.learning_rate {
            c.train.learning_rate = rng.gen_range(lo.ln()..=hi.ln()).exp();
        }
        if let Some((lo, hi)) = self.hidden_dim {
            c.arch.hidden_dim = rng.gen_range(lo..=hi);
        }
        if let Some((lo, hi)) = self.window {
            c.window = rng.gen_range(lo..=hi);
        }
        if let Some((lo, hi)) = self.batch_size {
            c.train.batch_size = rng.gen_range(lo..=hi);
        }
        if let Some((lo, hi)) = self.patience {
            c.train.patience = rng.gen_range(lo..=hi);
        }
        if let Some((lo, hi)) = self.max_epochs {
            c.train.max_epochs = rng.gen_range(lo..=hi);
        }
        if let Some((lo, hi)) = self.clip_norm {
            c.train.clip_norm = rng.gen_range(lo..=hi);
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TrialConfig,
    /// Target-validation UAR.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Samples `budget` configurations up front, scores them (possibly in
/// parallel) and returns the best, earliest index winning ties.
pub fn random_search<F>(space: &SearchSpace, base: &TrialConfig, budget: usize, seed: u64, objective: F) -> Result<SearchOutcome>
where
    F: Fn(&TrialConfig) -> Result<f64> + Sync,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::invalid("search budget must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<TrialConfig> = (0..budget).map(|_| space.sample(base, &mut rng)).collect();
    let trials: Vec<Trial> = configs
        .into_par_iter()
        .enumerate()
        .map(|(index, config)| {
            let score = objective(&config)?;
            Ok(Trial { index, config, score })
        })
        .collect::<Result<_>>()?;
    let mut best = &trials[0];
    for t in &trials[1..] {
        if t.score > best.score {
            best = t;
        }
    }
    Ok(SearchOutcome {
        best: best.clone(),
        trials,
    })
}

/// Objective for [`random_search`]: train on `train`, early-stop and
/// calibrate on `valid`, return conversation-level validation UAR.
pub fn validation_uar_objective<'a>(
    train: &'a Corpus,
    valid: &'a Corpus,
    encoder: &'a UtteranceEncoder,
    rule: ThresholdRule,
) -> impl Fn(&TrialConfig) -> Result<f64> + Sync + 'a {
    move |trial: &TrialConfig| {
        let tr = encode_corpus(train, encoder, trial.window, 1)?;
        let va = encode_corpus(valid, encoder, trial.window, 1)?;
        let (model, _) = train_encoded(&tr, &va, &trial.arch, &trial.train)?;
        let cal = calibrate_model(&model, &va, rule)?;
        Ok(evaluate_model(&model, &va, cal.threshold, rule)?.uar)
    }
}
