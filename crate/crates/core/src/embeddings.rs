//! Frozen utterance embedding providers.
//!
//! Two providers exist: a precomputed table keyed by
//! `(conversation_id, utterance_index)` and a seeded signed feature-hashing
//! embedder. Neither has trainable state.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::features::{concat_features, lexicon_features, tokenize, LexiconSet};

pub const DEFAULT_DIM: usize = 64;

pub trait EmbeddingProvider {
    fn dim(&self) -> usize;

    fn embed(&self, conversation_id: &str, utterance: &Utterance) -> Result<Vec<f64>>;
}

/// Signed feature hashing: every token adds `±1` to one of `dim` buckets,
/// then the vector is L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(HashedEmbedder { dim, seed })
    }

    /// Platform-independent 64-bit token hash (seeded FNV-1a, splitmix finalizer).
    pub fn token_hash(&self, token: &str) -> u64 {
        let mut h = FNV_OFFSET;
        for b in self.seed.to_le_bytes().iter().chain(token.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        splitmix64(h)
    }

    /// Bucket and sign of a token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = self.token_hash(token);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in tokenize(text) {
            let (bucket, sign) = self.slot(&t);
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _conversation_id: &str, utterance: &Utterance) -> Result<Vec<f64>> {
        Ok(self.embed_text(&utterance.text))
    }
}

/// Precomputed embeddings.
///
/// File format: first line `dim<TAB><D>`, then one
/// `conversation_id<TAB>utterance_index<TAB>v1,...,vD` line per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<(String, usize), Vec<f64>>,
    pub path: Option<PathBuf>,
}

impl EmbeddingTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let dim = match lines.next() {
            Some((_, header)) => {
                let mut f = header.split('\t');
                match (f.next(), f.next().map(|d| d.trim().parse::<usize>()), f.next()) {
                    (Some("dim"), Some(Ok(d)), None) if d > 0 => d,
                    _ => {
                        return Err(Error::Parse {
                            line: 1,
                            message: "expected header `dim<TAB><D>`".into(),
                        })
                    }
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty embedding table".into(),
                })
            }
        };
        let mut entries = HashMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: line_no, message };
            let mut f = line.split('\t');
            let (Some(id), Some(index), Some(values), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(bad("expected `conversation_id<TAB>utterance_index<TAB>values`".into()));
            };
            let index: usize = index
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad utterance index `{index}`")))?;
            let vector = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| bad(format!("bad value: {e}")))?;
            if vector.len() != dim {
                return Err(bad(format!("expected {dim} values, found {}", vector.len())));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value".into()));
            }
            let key = (id.to_owned(), index);
            if entries.contains_key(&key) {
                return Err(Error::DuplicateKey {
                    conversation_id: key.0,
                    index,
                    line: line_no,
                });
            }
            entries.insert(key, vector);
        }
        Ok(EmbeddingTable {
            dim,
            entries,
            path: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable::parse(&text)?;
        table.path = Some(path.to_owned());
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, conversation_id: &str, index: usize) -> Option<&[f64]> {
        self.entries
            .get(&(conversation_id.to_owned(), index))
            .map(Vec::as_slice)
    }
}

impl EmbeddingProvider for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, conversation_id: &str, utterance: &Utterance) -> Result<Vec<f64>> {
        self.get(conversation_id, utterance.index)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::MissingEmbedding {
                conversation_id: conversation_id.to_owned(),
                index: utterance.index,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provider {
    Hashed(HashedEmbedder),
    Table(EmbeddingTable),
}

impl Provider {
    /// Short description stored in checkpoints, e.g. `hash:dim=64:seed=0`.
    pub fn descriptor(&self) -> String {
        match self {
            Provider::Hashed(h) => format!("hash:dim={}:seed={}", h.dim, h.seed),
            Provider::Table(t) => format!(
                "table:dim={}:path={}",
                t.dim,
                t.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ),
        }
    }
}

impl EmbeddingProvider for Provider {
    fn dim(&self) -> usize {
        match self {
            Provider::Hashed(h) => h.dim(),
            Provider::Table(t) => t.dim(),
        }
    }

    fn embed(&self, conversation_id: &str, utterance: &Utterance) -> Result<Vec<f64>> {
        match self {
            Provider::Hashed(h) => h.embed(conversation_id, utterance),
            Provider::Table(t) => t.embed(conversation_id, utterance),
        }
    }
}

/// Turns an utterance into the recurrent model's input vector: the frozen
/// embedding, optionally followed by lexicon-category shares.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEncoder {
    pub provider: Provider,
    pub lexicons: Option<LexiconSet>,
}

impl UtteranceEncoder {
    pub fn new(provider: Provider) -> Self {
        UtteranceEncoder {
            provider,
            lexicons: None,
        }
    }

    pub fn with_lexicons(mut self, lexicons: LexiconSet) -> Self {
        self.lexicons = Some(lexicons);
        self
    }

    pub fn hashed(dim: usize, seed: u64) -> Result<Self> {
        Ok(UtteranceEncoder::new(Provider::Hashed(HashedEmbedder::new(dim, seed)?)))
    }

    pub fn dim(&self) -> usize {
        self.provider.dim() + self.lexicons.as_ref().map_or(0, LexiconSet::len)
    }

    pub fn encode(&self, conversation_id: &str, utterance: &Utterance) -> Result<Vec<f64>> {
        let e = self.provider.embed(conversation_id, utterance)?;
        match &self.lexicons {
            Some(lex) => concat_features(&e, &lexicon_features(&utterance.text, lex)),
            None => Ok(e),
        }
    }

    pub fn descriptor(&self) -> String {
        match &self.lexicons {
            Some(lex) => format!("{}+lexicon:{}", self.provider.descriptor(), &lex.content_hash()[..16]),
            None => self.provider.descriptor(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn utt(text: &str, index: usize) -> Utterance {
        Utterance {
            speaker: "P".into(),
            text: text.into(),
            index,
        }
    }

    #[test]
    fn hashed_is_deterministic_and_normalized() {
        let h = HashedEmbedder::new(64, 7).unwrap();
        let a = h.embed_text("I could not sleep again");
        assert_eq!(a, h.embed_text("I could not sleep again"));
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
        assert!(h.embed_text("").iter().all(|&x| x == 0.0));
        assert!(h.embed_text("...").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn seed_changes_the_map() {
        let a = HashedEmbedder::new(64, 1).unwrap().embed_text("tired sad alone");
        let b = HashedEmbedder::new(64, 2).unwrap().embed_text("tired sad alone");
        assert_ne!(a, b);
    }

    #[test]
    fn disjoint_texts_are_nearly_orthogonal() {
        let h = HashedEmbedder::new(64, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut cosines = Vec::new();
        for trial in 0..1000 {
            let n = rng.gen_range(3..12);
            let a: Vec<String> = (0..n).map(|i| format!("a{trial}x{i}")).collect();
            let b: Vec<String> = (0..n).map(|i| format!("b{trial}y{i}")).collect();
            let va = h.embed_text(&a.join(" "));
            let vb = h.embed_text(&b.join(" "));
            cosines.push(va.iter().zip(&vb).map(|(x, y)| x * y).sum::<f64>());
        }
        cosines.sort_by(f64::total_cmp);
        assert!(cosines[500] <= 0.2, "median cosine {}", cosines[500]);
    }

    #[test]
    fn table_parsing() {
        let t = EmbeddingTable::parse("dim\t4\nc1\t0\t1,2,3,4\nc1\t1\t0,0,0,1\nc2\t0\t0.5,0.5,0.5,0.5\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.embed("c1", &utt("ignored", 1)).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            t.embed("c9", &utt("x", 0)),
            Err(Error::MissingEmbedding { index: 0, .. })
        ));
    }

    #[test]
    fn table_errors() {
        assert!(matches!(
            EmbeddingTable::parse("dim\t4\nc1\t0\t1,2,3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse("dim\t2\nc1\t0\t1,2\nc1\t0\t3,4\n"),
            Err(Error::DuplicateKey { line: 3, .. })
        ));
        assert!(EmbeddingTable::parse("dim\t2\nc1\t0\t1,NaN\n").is_err());
        assert!(EmbeddingTable::parse("width\t2\n").is_err());
    }

    #[test]
    fn encoder_appends_lexicon_shares() {
        let lex = LexiconSet::from_pairs([("sad", "NEG"), ("ok", "POS")]);
        let enc = UtteranceEncoder::hashed(8, 0).unwrap().with_lexicons(lex);
        assert_eq!(enc.dim(), 10);
        let v = enc.encode("c", &utt("sad sad ok ok", 0)).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(&v[8..], &[0.5, 0.5]);
    }
}
