use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use depscreen_core::calibration::{positive_fraction, StreamVerdict};
use depscreen_core::checkpoint::{Checkpoint, CheckpointHeader};
use depscreen_core::chunking::{Chunk, StreamChunker};
use depscreen_core::corpus::{
    filter_speaker, load_corpus, split_path, synth_generate, write_corpus, Corpus, Split, SynthSpec, Utterance,
};
use depscreen_core::embeddings::{EmbeddingTable, HashedEmbedder, Provider, UtteranceEncoder};
use depscreen_core::features::{build_vocab, BowVector, LexiconSet, Vocabulary};
use depscreen_core::metrics::{report, score, MetricSet};
use depscreen_core::models::{
    format_weight, logreg_top_weights, logreg_train, train_encoded, ArchConfig, LogRegModel, TrainConfig,
};
use depscreen_core::pipeline::{calibrate_model, conversation_predictions, encode_corpus, verdicts};
use depscreen_core::transfer::{
    random_search, run_modes, validation_uar_objective, Mode, SearchSpace, TransferPlan, TrialConfig,
};

use crate::args::*;
use crate::manifest::RunManifest;
use crate::{Cli, Failure};

type Res<T = ()> = Result<T, Failure>;

pub const ETHICS_NOTICE: &str = "depscreen: screening output is not a diagnosis. Use only under the supervision of a qualified therapist.";

pub fn run(command: &Command, argv: &[String]) -> Res {
    match command {
        Command::GenSynth(a) => gen_synth(command, argv, a),
        Command::Train(a) => train(command, argv, a),
        Command::Calibrate(a) => calibrate(command, argv, a),
        Command::Evaluate(a) => evaluate(command, argv, a),
        Command::Transfer(a) => transfer(command, argv, a),
        Command::Search(a) => search(command, argv, a),
        Command::Stream(a) => stream(command, argv, a),
        Command::Explain(a) => explain(command, argv, a),
        Command::Replay(a) => replay(a),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn out_err(e: io::Error) -> Failure {
    Failure::Runtime(format!("writing output: {e}"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Res {
    fs::write(path, text).map_err(io_err(path))
}

fn load_split(data: &DataArgs, split: Split) -> Res<(Corpus, PathBuf)> {
    load_split_from(&data.corpus_dir, data.speaker(), split)
}

fn load_split_from(dir: &Path, speaker: Option<&str>, split: Split) -> Res<(Corpus, PathBuf)> {
    let path = split_path(dir, split);
    let corpus = load_corpus(&path, split)?;
    let corpus = match speaker {
        Some(s) => filter_speaker(&corpus, s).0,
        None => corpus,
    };
    Ok((corpus, path))
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        learning_rate: t.lr,
        max_epochs: t.epochs,
        batch_size: t.batch_size,
        patience: t.patience,
        clip_norm: t.clip_norm,
        class_weighting: t.class_weighting,
        seed: t.seed,
    }
}

/// Encoder named by the flags, plus the files it reads.
fn build_encoder(e: &EmbedArgs) -> Res<(UtteranceEncoder, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    let provider = if e.embed == "hash" {
        Provider::Hashed(HashedEmbedder::new(e.dim, e.embed_seed)?)
    } else if let Some(path) = e.embed.strip_prefix("table:") {
        let path = PathBuf::from(path);
        let table = EmbeddingTable::load(&path)?;
        inputs.push(path);
        Provider::Table(table)
    } else {
        return Err(usage(format!("--embed must be `hash` or `table:<path>`, got `{}`", e.embed)));
    };
    let mut encoder = UtteranceEncoder::new(provider);
    match (&e.lexicons, e.with_features) {
        (Some(path), true) => {
            encoder = encoder.with_lexicons(LexiconSet::load(path)?);
            inputs.push(path.clone());
        }
        (None, true) => return Err(usage("--with-features needs --lexicons")),
        (Some(_), false) => return Err(usage("--lexicons is only used together with --with-features")),
        (None, false) => {}
    }
    Ok((encoder, inputs))
}

fn field<'a>(rest: &'a str, key: &str) -> Res<&'a str> {
    rest.split(':')
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .ok_or_else(|| Failure::Runtime(format!("checkpoint embedding descriptor lacks `{key}`")))
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Res<T> {
    v.parse().map_err(|_| Failure::Runtime(format!("bad number `{v}` in checkpoint embedding descriptor")))
}

/// Rebuilds the encoder a chunk checkpoint was trained with.
fn encoder_for(header: &CheckpointHeader, lexicons: Option<&PathBuf>) -> Res<(UtteranceEncoder, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    let (base, lexicon_hash) = match header.embedding.split_once("+lexicon:") {
        Some((b, h)) => (b, Some(h)),
        None => (header.embedding.as_str(), None),
    };
    let provider = if let Some(rest) = base.strip_prefix("hash:") {
        Provider::Hashed(HashedEmbedder::new(parse_num(field(rest, "dim")?)?, parse_num(field(rest, "seed")?)?)?)
    } else if let Some(rest) = base.strip_prefix("table:") {
        let (_, path) = rest
            .split_once("path=")
            .ok_or_else(|| Failure::Runtime("checkpoint embedding descriptor lacks `path`".into()))?;
        let path = PathBuf::from(path);
        let table = EmbeddingTable::load(&path)?;
        inputs.push(path);
        Provider::Table(table)
    } else {
        return Err(Failure::Runtime(format!("unknown embedding descriptor `{}`", header.embedding)));
    };
    let mut encoder = UtteranceEncoder::new(provider);
    match (lexicon_hash, lexicons) {
        (Some(_), Some(path)) => {
            encoder = encoder.with_lexicons(LexiconSet::load(path)?);
            inputs.push(path.clone());
        }
        (Some(_), None) => return Err(usage("checkpoint was trained with lexicon features; pass --lexicons")),
        (None, Some(_)) => return Err(usage("checkpoint was trained without lexicon features; drop --lexicons")),
        (None, None) => {}
    }
    if encoder.descriptor() != header.embedding || encoder.dim() != header.input_dim {
        return Err(Failure::Runtime(format!(
            "checkpoint was trained with `{}` (dim {}), rebuilt encoder is `{}` (dim {})",
            header.embedding,
            header.input_dim,
            encoder.descriptor(),
            encoder.dim()
        )));
    }
    Ok((encoder, inputs))
}

fn geometry(header: &CheckpointHeader, window: Option<usize>, stride: Option<usize>) -> (usize, usize) {
    (window.unwrap_or(header.window), stride.unwrap_or(header.stride))
}

fn logreg_vocab(checkpoint: &Checkpoint, ckpt_path: &Path, vocab: Option<&PathBuf>) -> Res<(Vocabulary, PathBuf)> {
    let path = vocab.cloned().unwrap_or_else(|| with_suffix(ckpt_path, ".vocab"));
    let v = Vocabulary::load(&path)?;
    checkpoint.require_vocab(&v.content_hash(), v.len())?;
    Ok((v, path))
}

fn conversation_bow(c: &depscreen_core::corpus::Conversation, vocab: &Vocabulary) -> BowVector {
    let mut bow = BowVector::zeros(vocab.len());
    for u in &c.utterances {
        bow.add_text(&u.text, vocab);
    }
    bow
}

fn print_metrics(out: &mut impl Write, split: Split, n: usize, threshold: Option<f64>, m: &MetricSet) -> io::Result<()> {
    writeln!(out, "split\t{split}")?;
    writeln!(out, "conversations\t{n}")?;
    match threshold {
        Some(t) => writeln!(out, "threshold\t{t}")?,
        None => writeln!(out, "threshold\t-")?,
    }
    writeln!(out, "UAR\t{:.6}", m.uar)?;
    writeln!(out, "UAP\t{:.6}", m.uap)?;
    writeln!(out, "macro-F1\t{:.6}", m.macro_f1)?;
    writeln!(out, "accuracy\t{:.6}", m.accuracy)
}

fn gen_synth(command: &Command, argv: &[String], a: &GenSynthArgs) -> Res {
    let spec = SynthSpec {
        n_train: a.n_train,
        n_valid: a.n_valid,
        n_test: a.n_test,
        utterances_per_conversation: (a.min_utterances, a.max_utterances),
        words_per_utterance: (a.min_words, a.max_words),
        signal_strength: a.signal_strength,
        base_rate: a.base_rate,
        base_vocab_size: a.base_vocab_size,
        risk_lexicon_size: a.risk_lexicon_size,
        positive_ratio: a.positive_ratio,
        interviewer_turns: !a.no_interviewer,
        id_prefix: a.id_prefix.clone(),
        seed: a.seed,
    };
    spec.validate()?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    RunManifest::new(command, argv, &[], Some(a.seed))?.write(&a.out.join("manifest.json"))?;
    let synth = synth_generate(&spec)?;
    for corpus in [&synth.train, &synth.valid, &synth.test] {
        write_corpus(split_path(&a.out, corpus.split), corpus)?;
    }
    let lexicon: String = synth.risk_lexicon.iter().map(|w| format!("{w}\trisk\n")).collect();
    write_text(&a.out.join("lexicon.tsv"), &lexicon)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "wrote {}/{}/{} conversations and {} lexicon words to {}",
        synth.train.len(),
        synth.valid.len(),
        synth.test.len(),
        synth.risk_lexicon.len(),
        a.out.display()
    )
    .map_err(out_err)
}

fn train(command: &Command, argv: &[String], a: &TrainArgs) -> Res {
    let (train, train_path) = load_split(&a.data, Split::Train)?;
    let manifest_path = with_suffix(&a.checkpoint, ".manifest.json");
    let speaker = a.data.speaker().map(str::to_owned);
    let mut out = io::stdout().lock();
    match a.model.model {
        ModelChoice::ChunkBilstm => {
            let (valid, valid_path) = load_split(&a.data, Split::Valid)?;
            let (encoder, mut inputs) = build_encoder(&a.embed)?;
            inputs.splice(0..0, [train_path, valid_path]);
            RunManifest::new(command, argv, &inputs, Some(a.training.seed))?.write(&manifest_path)?;
            train.require_both_classes()?;
            let tr = encode_corpus(&train, &encoder, a.model.window, a.model.stride)?;
            let va = encode_corpus(&valid, &encoder, a.model.window, a.model.stride)?;
            let arch = ArchConfig {
                hidden_dim: a.model.hidden,
                attention: a.model.attention,
            };
            let (model, log) = train_encoded(&tr, &va, &arch, &train_config(&a.training))?;
            let mut ckpt = Checkpoint::recurrent(model, encoder.descriptor(), a.model.window, a.model.stride, a.training.seed);
            ckpt.header.threshold_rule = a.threshold_rule;
            ckpt.header.speaker = speaker;
            ckpt.save(&a.checkpoint)?;
            let best_loss = match log.best_epoch {
                0 => log.initial_valid_loss,
                e => log.epochs.get(e - 1).and_then(|r| r.valid_loss),
            };
            writeln!(
                out,
                "trained chunk-bilstm on {} chunks: epochs {} best {} valid-loss {} -> {}",
                tr.len(),
                log.epochs.len(),
                log.best_epoch,
                best_loss.map_or("-".into(), |l| format!("{l:.6}")),
                a.checkpoint.display()
            )
            .map_err(out_err)
        }
        ModelChoice::Logreg => {
            if a.embed.with_features {
                return Err(usage("--with-features applies to chunk-bilstm models"));
            }
            RunManifest::new(command, argv, &[train_path], Some(a.training.seed))?.write(&manifest_path)?;
            train.require_both_classes()?;
            let vocab = build_vocab(&train, a.model.vocab_size)?;
            let data: Vec<(BowVector, u8)> = train
                .conversations
                .iter()
                .map(|c| (conversation_bow(c, &vocab), c.label))
                .collect();
            let model = logreg_train(&data, &train_config(&a.training), a.model.l2)?;
            vocab.save(with_suffix(&a.checkpoint, ".vocab"))?;
            let mut ckpt = Checkpoint::logreg(model, vocab.content_hash(), a.training.seed);
            ckpt.header.speaker = speaker;
            ckpt.save(&a.checkpoint)?;
            writeln!(
                out,
                "trained logreg on {} conversations with {} words -> {}",
                data.len(),
                vocab.len(),
                a.checkpoint.display()
            )
            .map_err(out_err)
        }
    }
}

fn calibrate(command: &Command, argv: &[String], a: &CalibrateArgs) -> Res {
    let mut ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.recurrent_model().is_err() {
        return Err(usage("calibration applies to chunk-bilstm checkpoints"));
    }
    let (encoder, mut inputs) = encoder_for(&ckpt.header, a.lexicons.as_ref())?;
    let (valid, valid_path) = load_split(&a.data, Split::Valid)?;
    inputs.splice(0..0, [a.checkpoint.clone(), valid_path]);
    let target = a.out.clone().unwrap_or_else(|| a.checkpoint.clone());
    RunManifest::new(command, argv, &inputs, Some(ckpt.header.seed))?
        .write(&with_suffix(&target, ".calibrate.manifest.json"))?;
    let rule = a.threshold_rule.unwrap_or(ckpt.header.threshold_rule);
    let set = encode_corpus(&valid, &encoder, ckpt.header.window, ckpt.header.stride)?;
    let cal = calibrate_model(ckpt.recurrent_model()?, &set, rule)?;
    ckpt.header.threshold = Some(cal.threshold);
    ckpt.header.threshold_rule = rule;
    ckpt.save(&target)?;
    writeln!(
        io::stdout().lock(),
        "threshold\t{}\nrule\t{rule}\nvalidation-accuracy\t{:.6}",
        cal.threshold,
        cal.accuracy
    )
    .map_err(out_err)
}

fn evaluate(command: &Command, argv: &[String], a: &EvaluateArgs) -> Res {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (corpus, corpus_path) = load_split(&a.data, a.split)?;
    let mut out = io::stdout().lock();
    match &ckpt.model {
        depscreen_core::checkpoint::CheckpointModel::Recurrent(model) => {
            let (encoder, mut inputs) = encoder_for(&ckpt.header, a.lexicons.as_ref())?;
            inputs.splice(0..0, [a.checkpoint.clone(), corpus_path]);
            if let Some(m) = &a.manifest {
                RunManifest::new(command, argv, &inputs, Some(ckpt.header.seed))?.write(m)?;
            }
            let threshold = ckpt.header.threshold.ok_or(depscreen_core::Error::Uncalibrated)?;
            let rule = ckpt.header.threshold_rule;
            let (window, stride) = geometry(&ckpt.header, a.window, a.stride);
            let set = encode_corpus(&corpus, &encoder, window, stride)?;
            let preds = conversation_predictions(model, &set)?;
            let (predicted, truths) = verdicts(&preds, threshold, rule)?;
            if a.per_conversation {
                for (p, v) in preds.iter().zip(&predicted) {
                    writeln!(
                        out,
                        "{}\t{}\t{:.6}\t{}",
                        p.conversation_id,
                        p.predictions.len(),
                        positive_fraction(p),
                        verdict_name(*v)
                    )
                    .map_err(out_err)?;
                }
            }
            let metrics = score(&predicted, &truths)?;
            print_metrics(&mut out, a.split, preds.len(), Some(threshold), &metrics).map_err(out_err)
        }
        depscreen_core::checkpoint::CheckpointModel::LogReg(model) => {
            if a.lexicons.is_some() {
                return Err(usage("--lexicons does not apply to logreg checkpoints"));
            }
            let (vocab, vocab_path) = logreg_vocab(&ckpt, &a.checkpoint, None)?;
            if let Some(m) = &a.manifest {
                RunManifest::new(command, argv, &[a.checkpoint.clone(), vocab_path, corpus_path], Some(ckpt.header.seed))?
                    .write(m)?;
            }
            let (predicted, truths) = logreg_predictions(model, &vocab, &corpus);
            if a.per_conversation {
                for (c, v) in corpus.conversations.iter().zip(&predicted) {
                    let p = model.predict_proba(&conversation_bow(c, &vocab).to_f64());
                    writeln!(out, "{}\t{:.6}\t{}", c.id, p, verdict_name(*v)).map_err(out_err)?;
                }
            }
            let metrics = score(&predicted, &truths)?;
            print_metrics(&mut out, a.split, corpus.len(), None, &metrics).map_err(out_err)
        }
    }
}

fn logreg_predictions(model: &LogRegModel, vocab: &Vocabulary, corpus: &Corpus) -> (Vec<u8>, Vec<u8>) {
    corpus
        .conversations
        .iter()
        .map(|c| (model.predict(&conversation_bow(c, vocab).to_f64()), c.label))
        .unzip()
}

fn verdict_name(label: u8) -> &'static str {
    if label == 1 {
        "depressed"
    } else {
        "non-depressed"
    }
}

fn require_chunk_model(m: &ModelArgs) -> Res {
    match m.model {
        ModelChoice::ChunkBilstm => Ok(()),
        ModelChoice::Logreg => Err(usage("this subcommand supports --model chunk-bilstm only")),
    }
}

fn model_label(m: &ModelArgs, e: &EmbedArgs) -> String {
    let mut label = String::from("chunk-bilstm");
    if m.attention {
        label.push_str("+attention");
    }
    if e.with_features {
        label.push_str("+feat");
    }
    label
}

fn truncate(mut corpus: Corpus, fraction: f64) -> Corpus {
    let keep = ((corpus.len() as f64 * fraction).round() as usize).max(1);
    corpus.conversations.truncate(keep);
    corpus
}

fn transfer(command: &Command, argv: &[String], a: &TransferArgs) -> Res {
    require_chunk_model(&a.model)?;
    if !(a.source_fraction > 0.0 && a.source_fraction <= 1.0) {
        return Err(usage(format!("--source-fraction must lie in (0, 1], got {}", a.source_fraction)));
    }
    let modes = a.modes.iter().map(|m| Mode::parse(m)).collect::<Result<Vec<_>, _>>()?;
    let seeds = if a.seeds.is_empty() { vec![a.training.seed] } else { a.seeds.clone() };
    let (encoder, enc_inputs) = build_encoder(&a.embed)?;
    let speaker = a.data.speaker();
    let (source_train, p1) = load_split_from(&a.source_dir, speaker, Split::Train)?;
    let (source_valid, p2) = load_split_from(&a.source_dir, speaker, Split::Valid)?;
    let (target_train, p3) = load_split(&a.data, Split::Train)?;
    let (target_valid, p4) = load_split(&a.data, Split::Valid)?;
    let (target_test, p5) = load_split(&a.data, Split::Test)?;
    let mut inputs = vec![p1, p2, p3, p4, p5];
    inputs.extend(enc_inputs);
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    RunManifest::new(command, argv, &inputs, seeds.first().copied())?.write(&a.out.join("manifest.json"))?;

    let base = TransferPlan {
        source_train: truncate(source_train, a.source_fraction),
        source_valid: truncate(source_valid, a.source_fraction),
        target_train,
        target_valid,
        target_test,
        encoder,
        arch: ArchConfig {
            hidden_dim: a.model.hidden,
            attention: a.model.attention,
        },
        window: a.model.window,
        stride: a.model.stride,
        pretrain: train_config(&a.training),
        finetune_factor: a.lr_finetune_factor,
        finetune_epochs: a.finetune_epochs.unwrap_or(a.training.epochs),
        freeze_embeddings: true,
        rule: a.threshold_rule,
        model_label: a.label.clone().unwrap_or_else(|| model_label(&a.model, &a.embed)),
        seed: 0,
    };
    base.validate()?;
    let mut results = Vec::new();
    for &seed in &seeds {
        let plan = TransferPlan { seed, ..base.clone() };
        results.extend(run_modes(&plan, &modes)?);
    }
    let rep = report(&results)?;
    write_text(&a.out.join("report.txt"), &rep.table)?;
    write_text(&a.out.join("report.jsonl"), &rep.records)?;
    io::stdout().lock().write_all(rep.table.as_bytes()).map_err(out_err)
}

fn range<T: Copy>(name: &str, v: &[T]) -> Res<Option<(T, T)>> {
    match v {
        [] => Ok(None),
        [lo, hi] => Ok(Some((*lo, *hi))),
        _ => Err(usage(format!("--{name} takes `lo,hi`"))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn search(command: &Command, argv: &[String], a: &SearchArgs) -> Res {
    require_chunk_model(&a.model)?;
    let space = SearchSpace {
        learning_rate: range("lr-range", &a.lr_range)?,
        hidden_dim: range("hidden-range", &a.hidden_range)?,
        window: range("window-range", &a.window_range)?,
        batch_size: range("batch-size-range", &a.batch_size_range)?,
        patience: range("patience-range", &a.patience_range)?,
        max_epochs: range("epochs-range", &a.epochs_range)?,
        clip_norm: None,
    };
    let (encoder, enc_inputs) = build_encoder(&a.embed)?;
    let (train, p1) = load_split(&a.data, Split::Train)?;
    let (valid, p2) = load_split(&a.data, Split::Valid)?;
    let mut inputs = vec![p1, p2];
    inputs.extend(enc_inputs);
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    RunManifest::new(command, argv, &inputs, Some(a.training.seed))?.write(&a.out.join("manifest.json"))?;
    let base = TrialConfig {
        train: train_config(&a.training),
        arch: ArchConfig {
            hidden_dim: a.model.hidden,
            attention: a.model.attention,
        },
        window: a.model.window,
    };
    let objective = validation_uar_objective(&train, &valid, &encoder, a.threshold_rule);
    let outcome = random_search(&space, &base, a.budget, a.training.seed, objective)?;
    let mut trials = String::new();
    for t in &outcome.trials {
        trials.push_str(&to_json(t)?);
        trials.push('\n');
    }
    write_text(&a.out.join("trials.jsonl"), &trials)?;
    write_text(&a.out.join("best.json"), &(to_json(&outcome.best)? + "\n"))?;
    let b = &outcome.best;
    writeln!(
        io::stdout().lock(),
        "best trial {} of {}: valid UAR {:.6} lr {} hidden {} window {} batch {} patience {} epochs {}",
        b.index,
        outcome.trials.len(),
        b.score,
        b.config.train.learning_rate,
        b.config.arch.hidden_dim,
        b.config.window,
        b.config.train.batch_size,
        b.config.train.patience,
        b.config.train.max_epochs
    )
    .map_err(out_err)
}

fn stream(command: &Command, argv: &[String], a: &StreamArgs) -> Res {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.recurrent_model()?;
    let (encoder, mut inputs) = encoder_for(&ckpt.header, a.lexicons.as_ref())?;
    inputs.insert(0, a.checkpoint.clone());
    if let Some(p) = &a.input {
        inputs.push(p.clone());
    }
    if let Some(m) = &a.manifest {
        RunManifest::new(command, argv, &inputs, Some(ckpt.header.seed))?.write(m)?;
    }
    let mut verdict = StreamVerdict::new(ckpt.header.threshold, ckpt.header.threshold_rule)?;
    let (window, stride) = geometry(&ckpt.header, a.window, a.stride);
    let mut chunker = StreamChunker::new(a.conversation_id.clone(), window, stride)?;
    eprintln!("{ETHICS_NOTICE}");

    let reader: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(io_err(p))?)),
        None => Box::new(io::stdin().lock()),
    };
    let speaker = ckpt.header.speaker.clone().unwrap_or_else(|| "P".into());
    let mut cache: VecDeque<Vec<f64>> = VecDeque::with_capacity(window);
    let mut out = io::stdout().lock();
    let mut emit = |chunk: &Chunk, cache: &VecDeque<Vec<f64>>, out: &mut io::StdoutLock| -> Res {
        let skip = cache.len() - chunk.len();
        let x: Vec<f64> = cache.iter().skip(skip).flatten().copied().collect();
        let label = u8::from(model.predict_proba(&x)? > 0.5);
        let u = verdict.feed(label);
        writeln!(out, "{}\t{:.6}\t{}", u.chunks, u.positive_fraction, u.verdict).map_err(out_err)?;
        out.flush().map_err(out_err)
    };
    for (index, line) in reader.lines().enumerate() {
        let text = line.map_err(|e| Failure::Runtime(format!("reading input: {e}")))?;
        let utterance = Utterance {
            speaker: speaker.clone(),
            text,
            index,
        };
        if cache.len() == window {
            cache.pop_front();
        }
        cache.push_back(encoder.encode(&a.conversation_id, &utterance)?);
        if let Some(chunk) = chunker.feed(utterance)? {
            emit(&chunk, &cache, &mut out)?;
        }
    }
    if let Some(chunk) = chunker.finish() {
        emit(&chunk, &cache, &mut out)?;
    }
    Ok(())
}

fn explain(command: &Command, argv: &[String], a: &ExplainArgs) -> Res {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.logreg_model()?;
    let (vocab, vocab_path) = logreg_vocab(&ckpt, &a.checkpoint, a.vocab.as_ref())?;
    if let Some(m) = &a.manifest {
        RunManifest::new(command, argv, &[a.checkpoint.clone(), vocab_path], Some(ckpt.header.seed))?.write(m)?;
    }
    let top = logreg_top_weights(model, &vocab, a.k)?;
    let mut out = io::stdout().lock();
    for (word, w) in top.positive.iter().chain(&top.negative) {
        writeln!(out, "{}", format_weight(word, *w)).map_err(out_err)?;
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> Res {
    let manifest = RunManifest::load(&a.manifest)?;
    manifest.verify()?;
    let mut argv = vec![String::from("depscreen")];
    argv.extend(manifest.argv.iter().cloned());
    let cli = <Cli as clap::Parser>::try_parse_from(&argv).map_err(|e| usage(format!("manifest arguments: {}", e.kind())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a manifest cannot replay another replay"));
    }
    run(&cli.command, &manifest.argv)
}
