use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use depscreen_core::calibration::ThresholdRule;
use depscreen_core::corpus::Split;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "depscreen", version, about = "Chunk-based depression screening over conversation transcripts")]
pub struct Cli {
    /// File of `flag=value` lines applied as defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Write a synthetic corpus with a planted risk lexicon.
    #[command(args_override_self = true)]
    GenSynth(GenSynthArgs),
    /// Train a model and write a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Pick the conversation threshold on the validation split.
    #[command(args_override_self = true)]
    Calibrate(CalibrateArgs),
    /// Score a calibrated checkpoint on one split.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Target-only / source-only / source+finetune comparison.
    #[command(args_override_self = true)]
    Transfer(TransferArgs),
    /// Seeded random hyperparameter search on the target validation split.
    #[command(args_override_self = true)]
    Search(SearchArgs),
    /// Screen one conversation read line by line.
    #[command(args_override_self = true)]
    Stream(StreamArgs),
    /// Largest logistic-regression weights.
    #[command(args_override_self = true)]
    Explain(ExplainArgs),
    /// Re-run a command from its manifest.
    #[command(args_override_self = true)]
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::Train(_) => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
            Command::Transfer(_) => "transfer",
            Command::Search(_) => "search",
            Command::Stream(_) => "stream",
            Command::Explain(_) => "explain",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModelChoice {
    #[value(name = "chunk-bilstm")]
    #[serde(rename = "chunk-bilstm")]
    ChunkBilstm,
    #[value(name = "logreg")]
    #[serde(rename = "logreg")]
    Logreg,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// Output directory for train/valid/test.jsonl and lexicon.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 50)]
    pub n_valid: usize,
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
    #[arg(long, default_value_t = 20)]
    pub min_utterances: usize,
    #[arg(long, default_value_t = 40)]
    pub max_utterances: usize,
    #[arg(long, default_value_t = 4)]
    pub min_words: usize,
    #[arg(long, default_value_t = 12)]
    pub max_words: usize,
    /// Extra risk-lexicon probability for depressed participants.
    #[arg(long, default_value_t = 0.3)]
    pub signal_strength: f64,
    #[arg(long, default_value_t = 0.05)]
    pub base_rate: f64,
    #[arg(long, default_value_t = 500)]
    pub base_vocab_size: usize,
    #[arg(long, default_value_t = 30)]
    pub risk_lexicon_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub positive_ratio: f64,
    /// Participant turns only.
    #[arg(long)]
    pub no_interviewer: bool,
    #[arg(long, default_value = "p")]
    pub id_prefix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Directory holding train.jsonl, valid.jsonl and test.jsonl.
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// Keep only this speaker's turns.
    #[arg(long, default_value = "P")]
    pub speaker: String,
    /// Keep every turn.
    #[arg(long)]
    pub all_speakers: bool,
}

impl DataArgs {
    pub fn speaker(&self) -> Option<&str> {
        (!self.all_speakers).then_some(self.speaker.as_str())
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// `hash` or `table:<path>`.
    #[arg(long, default_value = "hash")]
    pub embed: String,
    /// Hashed embedding dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// `word<TAB>category` file.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    /// Append lexicon-category shares to every utterance embedding.
    #[arg(long)]
    pub with_features: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelChoice::ChunkBilstm)]
    pub model: ModelChoice,
    #[arg(long)]
    pub attention: bool,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3000)]
    pub vocab_size: usize,
    /// L2 penalty for logistic regression.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epoch cap (gradient steps for logistic regression).
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long)]
    pub class_weighting: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_parser = parse_rule, default_value = "fraction")]
    pub threshold_rule: ThresholdRule,
    /// Output checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Needed when the checkpoint was trained with lexicon features.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    /// Overrides the rule stored in the checkpoint.
    #[arg(long, value_parser = parse_rule)]
    pub threshold_rule: Option<ThresholdRule>,
    /// Write the calibrated checkpoint here instead of in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    /// Also print one line per conversation.
    #[arg(long)]
    pub per_conversation: bool,
    /// Override the checkpoint's window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    /// Source corpus directory (train and valid splits are used).
    #[arg(long)]
    pub source_dir: PathBuf,
    /// Keep this share of the source conversations.
    #[arg(long, default_value_t = 1.0)]
    pub source_fraction: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 0.1)]
    pub lr_finetune_factor: f64,
    /// Fine-tuning epoch cap; defaults to --epochs.
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Comma-separated seeds; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Comma-separated subset of target-only, source-no-finetune, source+finetune.
    #[arg(long, value_delimiter = ',', default_value = "target-only,source-no-finetune,source+finetune")]
    pub modes: Vec<String>,
    #[arg(long, value_parser = parse_rule, default_value = "fraction")]
    pub threshold_rule: ThresholdRule,
    /// Row label in the report.
    #[arg(long)]
    pub label: Option<String>,
    /// Directory for report.txt, report.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingArgs,
    #[arg(long, default_value_t = 10)]
    pub budget: usize,
    /// `lo,hi`, sampled log-uniformly.
    #[arg(long, value_delimiter = ',')]
    pub lr_range: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden_range: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub window_range: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub batch_size_range: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub patience_range: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub epochs_range: Vec<usize>,
    #[arg(long, value_parser = parse_rule, default_value = "fraction")]
    pub threshold_rule: ThresholdRule,
    /// Directory for trials.jsonl, best.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StreamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    /// Read utterances from this file instead of stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Key for table embeddings.
    #[arg(long, default_value = "stream")]
    pub conversation_id: String,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `<checkpoint>.vocab`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn parse_rule(s: &str) -> Result<ThresholdRule, String> {
    s.parse().map_err(|e: depscreen_core::Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: depscreen_core::Error| e.to_string())
}
