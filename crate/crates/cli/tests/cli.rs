use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread::sleep;
use std::time::Duration;

use depscreen_core::checkpoint::Checkpoint;
use depscreen_core::models::RecurrentChunkModel;

const BIN: &str = env!("CARGO_BIN_EXE_depscreen");

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> String {
    let out = run(args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with<S: AsRef<std::ffi::OsStr>>(args: &[S], code: i32) -> String {
    let out = run(args);
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic should be one line: {err}");
    err
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn small_corpus(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("corpus{seed}"));
    ok(&[
        "gen-synth", "--out", &p(&out), "--n-train", "30", "--n-valid", "12", "--n-test", "10",
        "--min-utterances", "8", "--max-utterances", "14", "--seed", &seed.to_string(),
    ]);
    out
}

fn train_small(corpus: &Path, ckpt: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--corpus-dir", corpus.to_str().unwrap(), "--window", "5", "--hidden", "4", "--dim", "16",
        "--epochs", "3", "--lr", "0.01", "--checkpoint", ckpt.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

fn calibrated_checkpoint(dir: &Path, window: usize) -> PathBuf {
    let model = RecurrentChunkModel::new(8, 2, false, 1).unwrap();
    let mut ckpt = Checkpoint::recurrent(model, "hash:dim=8:seed=0".into(), window, 1, 1);
    ckpt.header.threshold = Some(0.5);
    let path = dir.join(format!("w{window}.ckpt"));
    ckpt.save(&path).unwrap();
    path
}

#[test]
fn gen_synth_writes_splits_and_lexicon_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_corpus(dir.path(), 4);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "lexicon.tsv", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let first: Vec<Vec<u8>> = ["train.jsonl", "valid.jsonl", "test.jsonl", "lexicon.tsv"].iter().map(|f| bytes(&a.join(f))).collect();
    small_corpus(dir.path(), 4);
    let second: Vec<Vec<u8>> = ["train.jsonl", "valid.jsonl", "test.jsonl", "lexicon.tsv"].iter().map(|f| bytes(&a.join(f))).collect();
    assert_eq!(first, second);
    assert_eq!(fs::read_to_string(a.join("lexicon.tsv")).unwrap().lines().count(), 30);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(&["gen-synth", "--out", &p(&dir.path().join("x")), "--signal-strength", "1.5"], 2);
    assert!(err.contains("signal strength"), "{err}");
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["gen-synth", "--out", "x", "--seed", "minus-one"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(&["train", "--corpus-dir", &p(&dir.path().join("nope")), "--checkpoint", "m.ckpt"], 1);
    assert!(err.contains("train.jsonl"), "{err}");
}

#[test]
fn single_class_training_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    fs::create_dir(&corpus).unwrap();
    let line = |id: &str, label: u8| format!("{{\"id\":\"{id}\",\"label\":{label},\"utterances\":[{{\"speaker\":\"P\",\"text\":\"hello there\"}}]}}\n");
    fs::write(corpus.join("train.jsonl"), line("a", 0) + &line("b", 0)).unwrap();
    fs::write(corpus.join("valid.jsonl"), line("c", 0) + &line("d", 1)).unwrap();
    let err = fails_with(&["train", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&dir.path().join("m"))], 2);
    assert!(err.contains("class 1"), "{err}");
}

#[test]
fn stream_emits_once_the_window_fills() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = calibrated_checkpoint(dir.path(), 50);
    let lines = |n: usize| (0..n).map(|i| format!("line number {i}\n")).collect::<String>();

    let input = dir.path().join("52.txt");
    fs::write(&input, lines(52)).unwrap();
    let out = ok(&["stream", "--checkpoint", &p(&ckpt), "--input", &p(&input)]);
    let counts: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(counts, ["1", "2", "3"]);
    for l in out.lines() {
        let f: Vec<&str> = l.split('\t').collect();
        assert_eq!(f.len(), 3);
        assert!(f[2] == "depressed" || f[2] == "non-depressed");
    }

    // Nothing is printed while fewer than 50 lines have arrived.
    let mut child = Command::new(BIN)
        .args(["stream", "--checkpoint", &p(&ckpt)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    stdin.write_all(lines(49).as_bytes()).unwrap();
    stdin.flush().unwrap();
    sleep(Duration::from_millis(300));
    stdin.write_all(b"the fiftieth line\n").unwrap();
    drop(stdin);
    let mut out = String::new();
    child.stdout.take().unwrap().read_to_string(&mut out).unwrap();
    let mut err = String::new();
    child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
    assert!(child.wait().unwrap().success());
    assert_eq!(out.lines().count(), 1, "{out}");
    assert!(out.starts_with("1\t"));
    assert!(err.contains("qualified therapist"));
}

#[test]
fn short_stream_reports_once_at_end_of_input() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = calibrated_checkpoint(dir.path(), 50);
    let input = dir.path().join("49.txt");
    fs::write(&input, "words\n".repeat(49)).unwrap();
    let out = ok(&["stream", "--checkpoint", &p(&ckpt), "--input", &p(&input)]);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("1\t"));
}

#[test]
fn stream_requires_a_calibrated_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = calibrated_checkpoint(dir.path(), 5);
    let mut c = Checkpoint::load(&ckpt).unwrap();
    c.header.threshold = None;
    c.save(&ckpt).unwrap();
    let input = dir.path().join("in.txt");
    fs::write(&input, "a\nb\n").unwrap();
    let err = fails_with(&["stream", "--checkpoint", &p(&ckpt), "--input", &p(&input)], 1);
    assert!(err.contains("calibrat"), "{err}");
}

#[test]
fn stream_replay_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 9);
    let ckpt = dir.path().join("m.ckpt");
    train_small(&corpus, &ckpt, &[]);
    ok(&["calibrate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)]);
    let eval = ok(&["evaluate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt), "--per-conversation"]);
    let test = fs::read_to_string(corpus.join("test.jsonl")).unwrap();
    let mut checked = 0;
    for record in test.lines() {
        let v: serde_json::Value = serde_json::from_str(record).unwrap();
        let id = v["id"].as_str().unwrap();
        let text: String = v["utterances"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|u| u["speaker"] == "P")
            .map(|u| format!("{}\n", u["text"].as_str().unwrap()))
            .collect();
        let input = dir.path().join(format!("{id}.txt"));
        fs::write(&input, text).unwrap();
        let streamed = ok(&["stream", "--checkpoint", &p(&ckpt), "--input", &p(&input)]);
        let last = streamed.lines().last().unwrap();
        let batch = eval.lines().find(|l| l.starts_with(&format!("{id}\t"))).unwrap();
        assert_eq!(&batch[id.len() + 1..], last, "{id}");
        checked += 1;
    }
    assert_eq!(checked, 10);
    for key in ["UAR\t", "UAP\t", "macro-F1\t", "accuracy\t"] {
        assert!(eval.contains(key));
    }
}

#[test]
fn explain_lists_top_and_bottom_weights() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 2);
    let ckpt = dir.path().join("lr.ckpt");
    ok(&["train", "--model", "logreg", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)]);
    let out = ok(&["explain", "--checkpoint", &p(&ckpt), "--k", "10"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 20);
    for l in &lines {
        let (word, weight) = l.split_once(" (").unwrap();
        assert!(!word.is_empty());
        assert!(weight.ends_with(')') && (weight.starts_with('+') || weight.starts_with('-')), "{l}");
        let digits = weight.trim_end_matches(')').split_once('.').unwrap().1;
        assert_eq!(digits.len(), 1, "{l}");
    }
    fails_with(&["explain", "--checkpoint", &p(&ckpt), "--k", "100000"], 2);
    let eval = ok(&["evaluate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)]);
    assert!(eval.contains("UAR\t"));

    let chunk = calibrated_checkpoint(dir.path(), 5);
    let err = fails_with(&["explain", "--checkpoint", &p(&chunk)], 1);
    assert!(err.contains("logreg"), "{err}");
    fails_with(&["calibrate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)], 2);
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 5);
    let config = dir.path().join("run.conf");
    fs::write(&config, "# defaults\nwindow=7\nhidden=3\nattention=true\nclass-weighting=false\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    ok(&[
        "--config", &p(&config), "train", "--corpus-dir", &p(&corpus), "--dim", "16", "--epochs", "1", "--hidden", "5",
        "--checkpoint", &p(&ckpt),
    ]);
    let h = Checkpoint::load(&ckpt).unwrap().header;
    assert_eq!((h.window, h.hidden_dim, h.attention), (7, 5, true));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["hidden"], 5);
    assert_eq!(manifest["config"]["window"], 7);
    assert_eq!(manifest["config"]["batch_size"], 32);
    assert!(!manifest["argv"].as_array().unwrap().iter().any(|a| a == "--config"));

    fs::write(&config, "no equals sign\n").unwrap();
    fails_with(&["--config", &p(&config), "train"], 2);
}

#[test]
fn replay_reproduces_and_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 6);
    let ckpt = dir.path().join("m.ckpt");
    train_small(&corpus, &ckpt, &[]);
    let first = bytes(&ckpt);
    fs::remove_file(&ckpt).unwrap();
    let manifest = dir.path().join("m.ckpt.manifest.json");
    ok(&["replay", &p(&manifest)]);
    assert_eq!(bytes(&ckpt), first);

    let train = corpus.join("train.jsonl");
    let mut text = fs::read_to_string(&train).unwrap();
    text = text.replacen("\"label\":0", "\"label\":1", 1);
    fs::write(&train, text).unwrap();
    let err = fails_with(&["replay", &p(&manifest)], 1);
    assert!(err.contains("changed"), "{err}");
}

#[test]
fn checkpoint_mismatches_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 8);
    let ckpt = calibrated_checkpoint(dir.path(), 5);
    let lex = corpus.join("lexicon.tsv");
    fails_with(&["evaluate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt), "--lexicons", &p(&lex)], 2);

    let text = fs::read_to_string(&ckpt).unwrap().replacen("hidden_dim=2", "hidden_dim=3", 1);
    fs::write(&ckpt, text).unwrap();
    let err = fails_with(&["evaluate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)], 1);
    assert!(err.contains("checkpoint"), "{err}");
}

#[test]
fn lexicon_features_flow_through_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path(), 3);
    let lex = corpus.join("lexicon.tsv");
    let ckpt = dir.path().join("feat.ckpt");
    train_small(&corpus, &ckpt, &["--with-features", "--lexicons", lex.to_str().unwrap()]);
    assert_eq!(Checkpoint::load(&ckpt).unwrap().header.input_dim, 17);
    fails_with(&["calibrate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt)], 2);
    ok(&["calibrate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt), "--lexicons", &p(&lex)]);
    let eval = ok(&["evaluate", "--corpus-dir", &p(&corpus), "--checkpoint", &p(&ckpt), "--lexicons", &p(&lex)]);
    assert!(eval.contains("macro-F1\t"));
    fails_with(&["train", "--corpus-dir", &p(&corpus), "--with-features", "--checkpoint", "x"], 2);
}

#[test]
fn transfer_and_search_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let target = small_corpus(dir.path(), 10);
    let source = small_corpus(dir.path(), 11);
    let out = dir.path().join("transfer");
    let table = ok(&[
        "transfer", "--source-dir", &p(&source), "--corpus-dir", &p(&target), "--window", "5", "--hidden", "3",
        "--dim", "8", "--epochs", "2", "--seeds", "0,1", "--out", &p(&out),
    ]);
    assert!(table.contains("source+finetune"));
    assert_eq!(fs::read_to_string(out.join("report.jsonl")).unwrap().lines().count(), 6);
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), table);
    fails_with(&["transfer", "--source-dir", &p(&source), "--corpus-dir", &p(&target), "--modes", "bogus", "--out", &p(&out)], 2);

    let out = dir.path().join("search");
    let line = ok(&[
        "search", "--corpus-dir", &p(&target), "--budget", "3", "--lr-range", "0.001,0.1", "--hidden-range", "2,4",
        "--window", "5", "--dim", "8", "--epochs", "2", "--out", &p(&out),
    ]);
    assert!(line.starts_with("best trial"));
    assert_eq!(fs::read_to_string(out.join("trials.jsonl")).unwrap().lines().count(), 3);
    assert!(out.join("best.json").is_file());
    fails_with(&["search", "--corpus-dir", &p(&target), "--lr-range", "0.1", "--out", &p(&out)], 2);
}
