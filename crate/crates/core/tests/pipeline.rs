use depscreen_core::corpus::{filter_speaker, synth_generate, Corpus, SynthSpec, PARTICIPANT};
use depscreen_core::embeddings::UtteranceEncoder;
use depscreen_core::features::{build_vocab, BowVector, Vocabulary};
use depscreen_core::metrics::{report, score, MetricSet};
use depscreen_core::models::{logreg_train, predict_encoded, train_encoded, ArchConfig, TrainConfig};
use depscreen_core::pipeline::encode_corpus;
use depscreen_core::transfer::{ExperimentResult, Mode, PlanSnapshot};

fn participant(c: &Corpus) -> Corpus {
    filter_speaker(c, PARTICIPANT).0
}

fn bows(c: &Corpus, vocab: &Vocabulary) -> Vec<(BowVector, u8)> {
    c.conversations
        .iter()
        .map(|conv| {
            let mut b = BowVector::zeros(vocab.len());
            for u in &conv.utterances {
                b.add_text(&u.text, vocab);
            }
            (b, conv.label)
        })
        .collect()
}

#[test]
fn no_signal_means_chance_level() {
    let mut uars = Vec::new();
    for seed in 0..10 {
        let s = synth_generate(&SynthSpec {
            n_train: 200,
            n_valid: 2,
            n_test: 200,
            signal_strength: 0.0,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let (train, test) = (participant(&s.train), participant(&s.test));
        let vocab = build_vocab(&train, 3000).unwrap();
        let config = TrainConfig { max_epochs: 300, ..TrainConfig::default() };
        let model = logreg_train(&bows(&train, &vocab), &config, 0.0).unwrap();
        let (pred, truth): (Vec<u8>, Vec<u8>) = bows(&test, &vocab)
            .into_iter()
            .map(|(b, y)| (model.predict(&b.to_f64()), y))
            .unzip();
        uars.push(score(&pred, &truth).unwrap().uar);
    }
    let mean = uars.iter().sum::<f64>() / uars.len() as f64;
    assert!((0.4..=0.6).contains(&mean), "mean UAR {mean} over {uars:?}");
}

#[test]
fn source_model_beats_chance_on_chunks() {
    let s = synth_generate(&SynthSpec {
        n_train: 400,
        n_valid: 100,
        n_test: 0,
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    let encoder = UtteranceEncoder::hashed(64, 0).unwrap();
    let train = encode_corpus(&participant(&s.train), &encoder, 10, 1).unwrap();
    let valid = encode_corpus(&participant(&s.valid), &encoder, 10, 1).unwrap();
    let config = TrainConfig { learning_rate: 1e-2, max_epochs: 8, seed: 3, ..TrainConfig::default() };
    let (model, _) = train_encoded(&train, &valid, &ArchConfig { hidden_dim: 8, attention: false }, &config).unwrap();
    let preds = predict_encoded(&model, &valid).unwrap();
    let correct = preds.iter().zip(&valid.spans).filter(|(p, s)| p.label == s.label).count();
    let accuracy = correct as f64 / preds.len() as f64;
    assert!(accuracy > 0.7, "chunk accuracy {accuracy}");
}

fn result(model: &str, mode: Mode, seed: u64, uar: f64) -> ExperimentResult {
    let m = MetricSet { uar, uap: uar, macro_f1: uar, accuracy: uar };
    let config = PlanSnapshot {
        model: model.into(),
        encoder: "hash:dim=4:seed=0".into(),
        arch: ArchConfig::default(),
        window: 50,
        stride: 1,
        pretrain: TrainConfig::default(),
        finetune: TrainConfig::default(),
        finetune_factor: 0.1,
        rule: Default::default(),
        source: [0, 0],
        target: [0, 0, 0],
        seed,
    };
    ExperimentResult {
        model: model.into(),
        mode,
        seed,
        valid: m,
        test: m,
        threshold: 0.5,
        calibration_accuracy: 1.0,
        param_hash: String::new(),
        config_hash: config.hash(),
        config,
        wall_clock: std::time::Duration::from_millis(seed * 100),
        access: Vec::new(),
    }
}

#[test]
fn report_pivots_modes_into_columns() {
    let label = "Chunk-biLSTM + USE5";
    let results = vec![
        result(label, Mode::SourceFinetune, 1, 0.8),
        result(label, Mode::TargetOnly, 0, 0.6),
        result(label, Mode::TargetOnly, 1, 0.7),
        result(label, Mode::SourceNoFinetune, 0, 0.65),
        result(label, Mode::SourceFinetune, 0, 0.9),
        result("LR + unigrams 3k", Mode::TargetOnly, 0, 0.55),
    ];
    let rep = report(&results).unwrap();
    let header = rep.table.lines().find(|l| l.starts_with("Unweighted Average Recall")).unwrap();
    let columns: Vec<&str> = header.split_whitespace().skip(3).collect();
    assert_eq!(columns, ["target-only", "source-no-finetune", "source+finetune"]);
    let row = rep.table.lines().filter(|l| l.starts_with(label)).last().unwrap();
    let cells: Vec<&str> = row[label.len()..].split_whitespace().collect();
    assert_eq!(cells, ["0.650", "0.650", "0.850"]);
    let lr_row = rep.table.lines().filter(|l| l.starts_with("LR + unigrams 3k")).last().unwrap();
    assert!(lr_row.ends_with(" -"));
    assert_eq!(rep.records.lines().count(), 6);

    // Wall-clock time never reaches the report.
    let mut reshuffled = results.clone();
    reshuffled.reverse();
    for r in &mut reshuffled {
        r.wall_clock = std::time::Duration::from_secs(99);
    }
    assert_eq!(report(&reshuffled).unwrap(), rep);
}
