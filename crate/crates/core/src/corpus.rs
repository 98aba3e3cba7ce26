//! Labeled conversation corpora: loading, writing, speaker filtering,
//! participant-level splitting and the synthetic planted-lexicon generator.
//!
//! On disk a corpus split is line-delimited JSON, one conversation per line:
//!
//! ```text
//! {"id":"p1","label":1,"utterances":[{"speaker":"P","text":"..."}]}
//! ```
//!
//! Utterance indices are not stored; they are assigned in file order.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    /// 0 = non-depressed, 1 = depressed.
    pub label: u8,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Builds a conversation from `(speaker, text)` pairs, assigning indices in order.
    pub fn new<S, T>(id: impl Into<String>, label: u8, turns: impl IntoIterator<Item = (S, T)>) -> Self
    where
        S: Into<String>,
        T: Into<String>,
    {
        let utterances = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Utterance {
                speaker: speaker.into(),
                text: text.into(),
                index,
            })
            .collect();
        Conversation {
            id: id.into(),
            label,
            utterances,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub conversations: Vec<Conversation>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(split: Split, conversations: Vec<Conversation>, provenance: impl Into<String>) -> Self {
        Corpus {
            split,
            conversations,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    /// Number of conversations per label, `[label 0, label 1]`.
    pub fn label_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for c in &self.conversations {
            counts[c.label as usize] += 1;
        }
        counts
    }

    /// Fails with [`Error::MissingClass`] unless both labels occur.
    pub fn require_both_classes(&self) -> Result<()> {
        let counts = self.label_counts();
        for class in 0..2u8 {
            if counts[class as usize] == 0 {
                return Err(Error::MissingClass {
                    split: self.split.to_string(),
                    class,
                });
            }
        }
        Ok(())
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: Option<String>,
    text: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    label: Option<serde_json::Value>,
    utterances: Option<Vec<RawTurn>>,
}

#[derive(Serialize)]
struct OutTurn<'a> {
    speaker: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    label: u8,
    utterances: Vec<OutTurn<'a>>,
}

fn parse_record(line_no: usize, line: &str) -> Result<Conversation> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let id = raw.id.ok_or(Error::MissingField {
        line: line_no,
        field: "id",
    })?;
    let label = raw.label.ok_or(Error::MissingField {
        line: line_no,
        field: "label",
    })?;
    let label = match label.as_u64() {
        Some(0) => 0,
        Some(1) => 1,
        _ => {
            return Err(Error::Parse {
                line: line_no,
                message: format!("label must be 0 or 1, got {label}"),
            })
        }
    };
    let turns = raw.utterances.ok_or(Error::MissingField {
        line: line_no,
        field: "utterances",
    })?;
    if turns.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            message: "empty utterance list".into(),
        });
    }
    let mut utterances = Vec::with_capacity(turns.len());
    for (index, turn) in turns.into_iter().enumerate() {
        let speaker = turn.speaker.ok_or(Error::MissingField {
            line: line_no,
            field: "speaker",
        })?;
        let text = turn.text.ok_or(Error::MissingField {
            line: line_no,
            field: "text",
        })?;
        if text.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("utterance {index} has empty text"),
            });
        }
        utterances.push(Utterance {
            speaker,
            text,
            index,
        });
    }
    Ok(Conversation {
        id,
        label,
        utterances,
    })
}

/// Parses a corpus from line-delimited records. Blank lines are skipped.
pub fn read_corpus(reader: impl BufRead, split: Split, provenance: &str) -> Result<Corpus> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut conversations = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let conv = parse_record(line_no, &line)?;
        if let Some(&first) = seen.get(&conv.id) {
            return Err(Error::DuplicateId {
                id: conv.id,
                first,
                second: line_no,
            });
        }
        seen.insert(conv.id.clone(), line_no);
        conversations.push(conv);
    }
    Ok(Corpus::new(split, conversations, provenance))
}

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), split, &path.display().to_string())
}

/// Loads `train`, `valid` and `test` from `<dir>/<split>.jsonl`.
pub fn load_corpus_dir(dir: impl AsRef<Path>) -> Result<[Corpus; 3]> {
    let dir = dir.as_ref();
    Ok([
        load_corpus(split_path(dir, Split::Train), Split::Train)?,
        load_corpus(split_path(dir, Split::Valid), Split::Valid)?,
        load_corpus(split_path(dir, Split::Test), Split::Test)?,
    ])
}

pub fn split_path(dir: &Path, split: Split) -> std::path::PathBuf {
    dir.join(format!("{}.jsonl", split.as_str()))
}

/// Serializes a corpus in the line-delimited record format.
pub fn write_corpus_to(mut writer: impl Write, corpus: &Corpus) -> std::io::Result<()> {
    for c in &corpus.conversations {
        let record = OutRecord {
            id: &c.id,
            label: c.label,
            utterances: c
                .utterances
                .iter()
                .map(|u| OutTurn {
                    speaker: &u.speaker,
                    text: &u.text,
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus_to(&mut buf, corpus).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Keeps only `speaker`'s utterances, re-indexing them contiguously.
///
/// Returns the filtered corpus and the number of conversations dropped
/// because nothing was left.
pub fn filter_speaker(corpus: &Corpus, speaker: &str) -> (Corpus, usize) {
    let mut dropped = 0;
    let mut conversations = Vec::with_capacity(corpus.len());
    for c in &corpus.conversations {
        let utterances: Vec<Utterance> = c
            .utterances
            .iter()
            .filter(|u| u.speaker == speaker)
            .enumerate()
            .map(|(index, u)| Utterance {
                index,
                ..u.clone()
            })
            .collect();
        if utterances.is_empty() {
            dropped += 1;
        } else {
            conversations.push(Conversation {
                id: c.id.clone(),
                label: c.label,
                utterances,
            });
        }
    }
    let filtered = Corpus::new(
        corpus.split,
        conversations,
        format!("{} [speaker={speaker}]", corpus.provenance),
    );
    (filtered, dropped)
}

/// Participant-level random partition into train/valid/test.
///
/// Valid and test sizes are `floor(n * fraction)`; the remainder goes to train.
/// Conversations keep their original relative order within each part.
pub fn split_corpus(corpus: &Corpus, fractions: (f64, f64, f64), seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n = corpus.len();
    if n < 3 {
        return Err(Error::invalid(format!("cannot split a corpus of {n} conversations")));
    }
    let n_valid = (n as f64 * fv + 1e-9).floor() as usize;
    let n_test = (n as f64 * fs + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![Split::Train; n];
    for &i in &order[..n_valid] {
        assignment[i] = Split::Valid;
    }
    for &i in &order[n_valid..n_valid + n_test] {
        assignment[i] = Split::Test;
    }
    let part = |split: Split| {
        let conversations = corpus
            .conversations
            .iter()
            .zip(&assignment)
            .filter(|(_, &s)| s == split)
            .map(|(c, _)| c.clone())
            .collect();
        Corpus::new(split, conversations, corpus.provenance.clone())
    };
    Ok((part(Split::Train), part(Split::Valid), part(Split::Test)))
}

/// Parameters of the synthetic planted-lexicon corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Inclusive range of participant utterances per conversation.
    pub utterances_per_conversation: (usize, usize),
    /// Inclusive range of tokens per utterance.
    pub words_per_utterance: (usize, usize),
    /// Extra probability mass on the risk lexicon for label-1 participants.
    pub signal_strength: f64,
    /// Probability that any participant token comes from the risk lexicon.
    pub base_rate: f64,
    pub base_vocab_size: usize,
    pub risk_lexicon_size: usize,
    pub positive_ratio: f64,
    /// Interleave an interviewer turn (speaker `Ellie`) before every participant turn.
    pub interviewer_turns: bool,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 200,
            n_valid: 50,
            n_test: 50,
            utterances_per_conversation: (20, 40),
            words_per_utterance: (4, 12),
            signal_strength: 0.3,
            base_rate: 0.05,
            base_vocab_size: 500,
            risk_lexicon_size: 30,
            positive_ratio: 0.3,
            interviewer_turns: true,
            id_prefix: "p".into(),
            seed: 0,
        }
    }
}

pub const PARTICIPANT: &str = "P";
pub const INTERVIEWER: &str = "Ellie";

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.signal_strength;
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::invalid(format!("signal strength must lie in [0, 1], got {d}")));
        }
        if !(0.0..=1.0).contains(&self.base_rate) || self.base_rate + d > 1.0 {
            return Err(Error::invalid(format!(
                "base rate {} plus signal strength {d} must lie in [0, 1]",
                self.base_rate
            )));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "positive ratio must lie in (0, 1), got {}",
                self.positive_ratio
            )));
        }
        if self.risk_lexicon_size == 0 || self.base_vocab_size == 0 {
            return Err(Error::invalid("vocabulary sizes must be positive"));
        }
        if self.risk_lexicon_size >= self.base_vocab_size {
            return Err(Error::invalid(format!(
                "risk lexicon size {} must be smaller than base vocabulary size {}",
                self.risk_lexicon_size, self.base_vocab_size
            )));
        }
        let (lo, hi) = self.utterances_per_conversation;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad utterance range {lo}..={hi}")));
        }
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("bad words-per-utterance range {lo}..={hi}")));
        }
        Ok(())
    }
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
    pub risk_lexicon: Vec<String>,
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pronounceable pseudo-word for an index. Injective.
pub fn synth_word(mut index: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut syllables = Vec::new();
    loop {
        let s = index % base;
        syllables.push(format!("{}{}", ONSETS[s / VOWELS.len()], VOWELS[s % VOWELS.len()]));
        index /= base;
        if index == 0 {
            break;
        }
        index -= 1;
    }
    // bijective base-80 numeral, most significant syllable first
    syllables.reverse();
    syllables.concat()
}

/// Generates train/valid/test corpora with a planted risk lexicon.
///
/// Every participant token comes from the risk lexicon with probability
/// `base_rate` (label 0) or `base_rate + signal_strength` (label 1), uniformly
/// over the lexicon; otherwise it is drawn from the base vocabulary with
/// Zipfian frequencies. Interviewer turns use the base vocabulary only.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let base: Vec<String> = (0..spec.base_vocab_size).map(synth_word).collect();
    let risk: Vec<String> = (spec.base_vocab_size..spec.base_vocab_size + spec.risk_lexicon_size)
        .map(synth_word)
        .collect();
    let zipf = WeightedIndex::new((0..base.len()).map(|r| 1.0 / (r as f64 + 1.0)))
        .expect("non-empty positive weights");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let make_split = |split: Split, n: usize, rng: &mut ChaCha8Rng| -> Corpus {
        let mut positives = (n as f64 * spec.positive_ratio).round() as usize;
        if n >= 2 {
            positives = positives.clamp(1, n - 1);
        }
        let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < positives)).collect();
        labels.shuffle(rng);
        let conversations = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let risk_p = spec.base_rate + if label == 1 { spec.signal_strength } else { 0.0 };
                let length = rng.gen_range(spec.utterances_per_conversation.0..=spec.utterances_per_conversation.1);
                let mut turns: Vec<(String, String)> = Vec::with_capacity(length * 2);
                for _ in 0..length {
                    if spec.interviewer_turns {
                        let words = sentence_length(spec, rng);
                        let text = render((0..words).map(|_| base[zipf.sample(rng)].as_str()));
                        turns.push((INTERVIEWER.into(), text));
                    }
                    let words = sentence_length(spec, rng);
                    let mut tokens = Vec::with_capacity(words);
                    for _ in 0..words {
                        let token = if rng.gen::<f64>() < risk_p {
                            risk[rng.gen_range(0..risk.len())].as_str()
                        } else {
                            base[zipf.sample(rng)].as_str()
                        };
                        tokens.push(token);
                    }
                    turns.push((PARTICIPANT.into(), render(tokens.into_iter())));
                }
                Conversation::new(format!("{}-{}-{i:04}", spec.id_prefix, split), label, turns)
            })
            .collect();
        Corpus::new(split, conversations, format!("synth(seed={})", spec.seed))
    };

    let train = make_split(Split::Train, spec.n_train, &mut rng);
    let valid = make_split(Split::Valid, spec.n_valid, &mut rng);
    let test = make_split(Split::Test, spec.n_test, &mut rng);
    Ok(SynthCorpus {
        train,
        valid,
        test,
        risk_lexicon: risk,
    })
}

fn sentence_length(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(spec.words_per_utterance.0..=spec.words_per_utterance.1)
}

fn render<'a>(tokens: impl Iterator<Item = &'a str>) -> String {
    let mut text = tokens.collect::<Vec<_>>().join(" ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text.push('.');
    text
}
