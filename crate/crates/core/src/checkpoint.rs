//! Plain-text model checkpoints.
//!
//! ```text
//! depscreen-checkpoint v1
//! kind=chunk-bilstm
//! input_dim=64
//! ...
//! threshold=0.25
//! end
//! fwd.input 2048 0.013 -0.07 ...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a load/save
//! cycle is bit-exact.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::calibration::ThresholdRule;
use crate::error::{Error, Result};
use crate::models::{LogRegModel, ParamLayout, RecurrentChunkModel};

pub const MAGIC: &str = "depscreen-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ChunkBilstm,
    Logreg,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ChunkBilstm => "chunk-bilstm",
            ModelKind::Logreg => "logreg",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chunk-bilstm" => Ok(ModelKind::ChunkBilstm),
            "logreg" => Ok(ModelKind::Logreg),
            _ => Err(Error::invalid(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// 0 for logistic regression.
    pub hidden_dim: usize,
    pub attention: bool,
    /// Encoder descriptor for chunk models, `-` otherwise.
    pub embedding: String,
    /// Vocabulary content hash for logistic regression.
    pub vocab_hash: Option<String>,
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    pub threshold: Option<f64>,
    pub threshold_rule: ThresholdRule,
    /// Speaker whose turns were kept, if any.
    pub speaker: Option<String>,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointModel {
    Recurrent(RecurrentChunkModel),
    LogReg(LogRegModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: CheckpointModel,
}

fn opt_str(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or("none")
}

fn expected_blocks(h: &CheckpointHeader) -> Vec<(String, usize)> {
    match h.kind {
        ModelKind::ChunkBilstm => ParamLayout::new(h.input_dim, h.hidden_dim, h.attention)
            .blocks
            .iter()
            .map(|b| (b.name.to_owned(), b.len))
            .collect(),
        ModelKind::Logreg => vec![("weights".into(), h.input_dim), ("bias".into(), 1)],
    }
}

impl Checkpoint {
    pub fn recurrent(model: RecurrentChunkModel, embedding: String, window: usize, stride: usize, seed: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                kind: ModelKind::ChunkBilstm,
                input_dim: model.input_dim(),
                hidden_dim: model.hidden_dim(),
                attention: model.has_attention(),
                embedding,
                vocab_hash: None,
                window,
                stride,
                seed,
                threshold: None,
                threshold_rule: ThresholdRule::Fraction,
                speaker: None,
                l2: 0.0,
            },
            model: CheckpointModel::Recurrent(model),
        }
    }

    pub fn logreg(model: LogRegModel, vocab_hash: String, seed: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                kind: ModelKind::Logreg,
                input_dim: model.weights.len(),
                hidden_dim: 0,
                attention: false,
                embedding: "-".into(),
                vocab_hash: Some(vocab_hash),
                window: 0,
                stride: 0,
                seed,
                threshold: None,
                threshold_rule: ThresholdRule::Fraction,
                speaker: None,
                l2: model.l2,
            },
            model: CheckpointModel::LogReg(model),
        }
    }

    pub fn recurrent_model(&self) -> Result<&RecurrentChunkModel> {
        match &self.model {
            CheckpointModel::Recurrent(m) => Ok(m),
            CheckpointModel::LogReg(_) => Err(Error::Checkpoint("expected a chunk-bilstm checkpoint, found logreg".into())),
        }
    }

    pub fn logreg_model(&self) -> Result<&LogRegModel> {
        match &self.model {
            CheckpointModel::LogReg(m) => Ok(m),
            CheckpointModel::Recurrent(_) => Err(Error::Checkpoint("expected a logreg checkpoint, found chunk-bilstm".into())),
        }
    }

    fn blocks(&self) -> Vec<(&str, &[f64])> {
        match &self.model {
            CheckpointModel::Recurrent(m) => {
                let layout = m.layout();
                layout
                    .blocks
                    .iter()
                    .map(|b| (b.name, &m.params()[b.offset..b.offset + b.len]))
                    .collect()
            }
            CheckpointModel::LogReg(m) => vec![("weights", &m.weights[..]), ("bias", std::slice::from_ref(&m.bias))],
        }
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "kind={}", h.kind);
        let _ = writeln!(s, "input_dim={}", h.input_dim);
        let _ = writeln!(s, "hidden_dim={}", h.hidden_dim);
        let _ = writeln!(s, "attention={}", h.attention);
        let _ = writeln!(s, "embedding={}", h.embedding);
        let _ = writeln!(s, "vocab_hash={}", opt_str(&h.vocab_hash));
        let _ = writeln!(s, "window={}", h.window);
        let _ = writeln!(s, "stride={}", h.stride);
        let _ = writeln!(s, "seed={}", h.seed);
        match h.threshold {
            Some(t) => {
                let _ = writeln!(s, "threshold={t}");
            }
            None => {
                let _ = writeln!(s, "threshold=none");
            }
        }
        let _ = writeln!(s, "threshold_rule={}", h.threshold_rule);
        let _ = writeln!(s, "speaker={}", opt_str(&h.speaker));
        let _ = writeln!(s, "l2={}", h.l2);
        let _ = writeln!(s, "end");
        for (name, values) in self.blocks() {
            let _ = write!(s, "{name} {}", values.len());
            for v in values {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        match lines.next() {
            Some(MAGIC) => {}
            Some(other) => return Err(bad(format!("unsupported header `{other}`, expected `{MAGIC}`"))),
            None => return Err(bad("empty checkpoint".into())),
        }
        let mut fields = std::collections::BTreeMap::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("header is missing `end`".into()))?;
            if line == "end" {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            if fields.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(bad(format!("duplicate header key `{k}`")));
            }
        }
        let mut take = |key: &str| fields.remove(key).ok_or_else(|| bad(format!("header is missing `{key}`")));
        fn num<T: FromStr>(key: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| Error::Checkpoint(format!("bad value `{v}` for `{key}`")))
        }
        let optional = |v: String| (v != "none").then_some(v);
        let kind: ModelKind = take("kind")?.parse().map_err(|e: Error| bad(e.to_string()))?;
        let threshold = match take("threshold")?.as_str() {
            "none" => None,
            t => {
                let t: f64 = num("threshold", t.to_owned())?;
                if !(0.0..=1.0).contains(&t) {
                    return Err(bad(format!("threshold {t} outside [0, 1]")));
                }
                Some(t)
            }
        };
        let header = CheckpointHeader {
            kind,
            input_dim: num("input_dim", take("input_dim")?)?,
            hidden_dim: num("hidden_dim", take("hidden_dim")?)?,
            attention: num("attention", take("attention")?)?,
            embedding: take("embedding")?,
            vocab_hash: optional(take("vocab_hash")?),
            window: num("window", take("window")?)?,
            stride: num("stride", take("stride")?)?,
            seed: num("seed", take("seed")?)?,
            threshold,
            threshold_rule: take("threshold_rule")?.parse().map_err(|e: Error| bad(e.to_string()))?,
            speaker: optional(take("speaker")?),
            l2: num("l2", take("l2")?)?,
        };
        if let Some(k) = fields.keys().next() {
            return Err(bad(format!("unknown header key `{k}`")));
        }

        let mut values = Vec::new();
        let expected = expected_blocks(&header);
        for (name, len) in &expected {
            let line = lines.next().ok_or_else(|| bad(format!("missing parameter block `{name}`")))?;
            let mut parts = line.split(' ');
            let found = parts.next().unwrap_or_default();
            if found != name {
                return Err(bad(format!("expected block `{name}`, found `{found}`")));
            }
            let n: usize = num(name, parts.next().unwrap_or_default().to_owned())?;
            if n != *len {
                return Err(bad(format!("block `{name}` has {n} values, header implies {len}")));
            }
            let start = values.len();
            for p in parts {
                let v: f64 = num(name, p.to_owned())?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite value in block `{name}`")));
                }
                values.push(v);
            }
            if values.len() - start != n {
                return Err(bad(format!("block `{name}` declares {n} values but holds {}", values.len() - start)));
            }
        }
        if let Some(extra) = lines.find(|l| !l.is_empty()) {
            let name = extra.split(' ').next().unwrap_or_default();
            return Err(bad(format!("unexpected trailing block `{name}`")));
        }

        let model = match header.kind {
            ModelKind::ChunkBilstm => CheckpointModel::Recurrent(
                RecurrentChunkModel::from_params(header.input_dim, header.hidden_dim, header.attention, values)
                    .map_err(|e| bad(e.to_string()))?,
            ),
            ModelKind::Logreg => {
                let bias = values.pop().expect("bias block present");
                CheckpointModel::LogReg(LogRegModel {
                    weights: values,
                    bias,
                    l2: header.l2,
                })
            }
        };
        Ok(Checkpoint { header, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Errors unless the checkpoint's input side matches the given encoder.
    pub fn require_embedding(&self, descriptor: &str, dim: usize) -> Result<()> {
        let h = &self.header;
        if h.kind != ModelKind::ChunkBilstm {
            return Err(Error::Checkpoint(format!("expected a chunk-bilstm checkpoint, found {}", h.kind)));
        }
        if h.embedding != descriptor || h.input_dim != dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with `{}` (dim {}), not `{descriptor}` (dim {dim})",
                h.embedding, h.input_dim
            )));
        }
        Ok(())
    }

    pub fn require_vocab(&self, hash: &str, len: usize) -> Result<()> {
        let h = &self.header;
        if h.kind != ModelKind::Logreg {
            return Err(Error::Checkpoint(format!("expected a logreg checkpoint, found {}", h.kind)));
        }
        if h.vocab_hash.as_deref() != Some(hash) || h.input_dim != len {
            return Err(Error::Checkpoint("vocabulary does not match the checkpoint".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let m = RecurrentChunkModel::new(5, 3, true, 7).unwrap();
        let mut c = Checkpoint::recurrent(m, "hash:dim=5:seed=0".into(), 10, 1, 7);
        c.header.threshold = Some(0.1 + 0.2);
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let text = c.to_text();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
        assert!(text.contains("\nthreshold=0.30000000000000004\n"));
    }

    #[test]
    fn logreg_round_trip() {
        let m = LogRegModel {
            weights: vec![1.5, -0.25, 3e-300],
            bias: -1.0 / 3.0,
            l2: 1e-4,
        };
        let mut c = Checkpoint::logreg(m, "abc".into(), 3);
        c.header.speaker = Some("P".into());
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert!(back.recurrent_model().is_err());
        assert!(back.require_vocab("abc", 3).is_ok());
        assert!(back.require_vocab("abd", 3).is_err());
    }

    #[test]
    fn uncalibrated_is_none() {
        let mut c = sample();
        c.header.threshold = None;
        assert!(c.to_text().contains("\nthreshold=none\n"));
        assert_eq!(Checkpoint::parse(&c.to_text()).unwrap().header.threshold, None);
    }

    #[test]
    fn header_mismatches_are_rejected() {
        let text = sample().to_text();
        for (from, to) in [
            ("hidden_dim=3", "hidden_dim=4"),
            ("input_dim=5", "input_dim=6"),
            ("attention=true", "attention=false"),
            (MAGIC, "depscreen-checkpoint v2"),
            ("threshold=0.30000000000000004", "threshold=1.5"),
            ("kind=chunk-bilstm", "kind=logreg"),
        ] {
            let broken = text.replacen(from, to, 1);
            assert!(matches!(Checkpoint::parse(&broken), Err(Error::Checkpoint(_))), "{from} -> {to}");
        }
        let truncated: String = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&truncated).is_err());
        assert!(Checkpoint::parse(&format!("{text}extra 1 0\n")).is_err());
        assert!(Checkpoint::parse(&text.replacen("seed=7\n", "", 1)).is_err());
    }

    #[test]
    fn embedding_must_match() {
        let c = sample();
        assert!(c.require_embedding("hash:dim=5:seed=0", 5).is_ok());
        assert!(c.require_embedding("hash:dim=5:seed=1", 5).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(matches!(Checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
