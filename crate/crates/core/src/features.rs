//! Tokenization, frequency-ranked vocabularies, bag-of-words counts and
//! lexicon-category features.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    rank: HashMap<String, usize>,
    pub source: String,
}

impl Vocabulary {
    /// Builds a vocabulary from an already-ordered word list. Words must be distinct.
    pub fn from_words(words: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let mut rank = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if rank.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary word `{w}`")));
            }
        }
        Ok(Vocabulary {
            words,
            rank,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn rank(&self, word: &str) -> Option<usize> {
        self.rank.get(word).copied()
    }

    /// Hex SHA-256 over the ordered word list.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One word per line, rank order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for w in &self.words {
            text.push_str(w);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text.lines().filter(|l| !l.is_empty()).map(str::to_owned).collect();
        Vocabulary::from_words(words, path.display().to_string())
    }
}

/// Top-`k` tokens by frequency over every utterance of `corpus`, ties broken
/// lexicographically.
pub fn build_vocab(corpus: &Corpus, k: usize) -> Result<Vocabulary> {
    if k == 0 {
        return Err(Error::invalid("vocabulary size must be positive"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for c in &corpus.conversations {
        for u in &c.utterances {
            for t in tokenize(&u.text) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Vocabulary::from_words(
        ranked.into_iter().map(|(w, _)| w).collect(),
        format!("{} top-{k}", corpus.provenance),
    )
}

/// Raw term counts aligned with a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowVector {
    pub counts: Vec<u32>,
}

impl BowVector {
    pub fn zeros(k: usize) -> Self {
        BowVector { counts: vec![0; k] }
    }

    pub fn add_text(&mut self, text: &str, vocab: &Vocabulary) {
        for t in tokenize(text) {
            if let Some(i) = vocab.rank(&t) {
                self.counts[i] += 1;
            }
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

/// Out-of-vocabulary tokens are dropped.
pub fn bow_vectorize(text: &str, vocab: &Vocabulary) -> BowVector {
    let mut v = BowVector::zeros(vocab.len());
    v.add_text(text, vocab);
    v
}

/// Word-to-category multimap. Category order is first appearance in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconSet {
    categories: Vec<String>,
    entries: HashMap<String, Vec<usize>>,
}

impl LexiconSet {
    pub fn from_pairs<W: AsRef<str>, C: AsRef<str>>(pairs: impl IntoIterator<Item = (W, C)>) -> Self {
        let mut categories: Vec<String> = Vec::new();
        let mut entries: HashMap<String, Vec<usize>> = HashMap::new();
        for (word, category) in pairs {
            let category = category.as_ref();
            let ci = match categories.iter().position(|c| c == category) {
                Some(i) => i,
                None => {
                    categories.push(category.to_owned());
                    categories.len() - 1
                }
            };
            let slot = entries.entry(word.as_ref().to_lowercase()).or_default();
            if !slot.contains(&ci) {
                slot.push(ci);
                slot.sort_unstable();
            }
        }
        LexiconSet {
            categories,
            entries,
        }
    }

    /// Parses `word<TAB>category` lines. Blank lines are skipped, duplicate pairs ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(w), Some(c), None) if !w.trim().is_empty() && !c.trim().is_empty() => {
                    pairs.push((w.trim().to_owned(), c.trim().to_owned()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "expected `word<TAB>category`".into(),
                    })
                }
            }
        }
        let set = LexiconSet::from_pairs(pairs);
        if set.categories.is_empty() {
            return Err(Error::invalid("lexicon file defines no categories"));
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LexiconSet::parse(&text)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories_of(&self, word: &str) -> &[usize] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Hex SHA-256 over the sorted `(word, category)` pairs.
    pub fn content_hash(&self) -> String {
        let mut pairs: Vec<(&str, &str)> = self
            .entries
            .iter()
            .flat_map(|(w, cs)| cs.iter().map(move |&c| (w.as_str(), self.categories[c].as_str())))
            .collect();
        pairs.sort_unstable();
        let mut h = Sha256::new();
        for c in &self.categories {
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        for (w, c) in pairs {
            h.update(w.as_bytes());
            h.update(b"\t");
            h.update(c.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Per-category token share: component `c` is the number of tokens mapped
/// to category `c` divided by `max(1, #tokens)`.
pub fn lexicon_features(text: &str, lexicons: &LexiconSet) -> Vec<f64> {
    let tokens = tokenize(text);
    let mut out = vec![0.0; lexicons.len()];
    for t in &tokens {
        for &c in lexicons.categories_of(t) {
            out[c] += 1.0;
        }
    }
    let denom = tokens.len().max(1) as f64;
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// `embedding` followed by `extra`.
pub fn concat_features(embedding: &[f64], extra: &[f64]) -> Result<Vec<f64>> {
    if embedding.iter().chain(extra).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let mut out = Vec::with_capacity(embedding.len() + extra.len());
    out.extend_from_slice(embedding);
    out.extend_from_slice(extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Conversation, Split};
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("I feel... TIRED"), vec!["i", "feel", "tired"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("don't"), vec!["don", "t"]);
    }

    fn corpus_from(text: &str) -> Corpus {
        Corpus::new(Split::Train, vec![Conversation::new("a", 0, [("P", text)])], "t")
    }

    #[test]
    fn vocab_is_frequency_ranked() {
        let c = corpus_from("the the the the the sad sad sad ok");
        let v = build_vocab(&c, 2).unwrap();
        assert_eq!(v.words(), ["the", "sad"]);
        assert_eq!(v.rank("sad"), Some(1));
        assert_eq!(build_vocab(&c, 10).unwrap().len(), 3);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let v = build_vocab(&corpus_from("b a b a"), 1).unwrap();
        assert_eq!(v.words(), ["a"]);
    }

    #[test]
    fn vocab_rejects_zero_size() {
        assert!(build_vocab(&corpus_from("x"), 0).is_err());
    }

    #[test]
    fn bow_counts() {
        let v = Vocabulary::from_words(vec!["a".into(), "b".into()], "t").unwrap();
        assert_eq!(bow_vectorize("a a c", &v).counts, vec![2, 0]);
        assert_eq!(bow_vectorize("", &v).counts, vec![0, 0]);
        assert_eq!(bow_vectorize("x y z", &v).counts, vec![0, 0]);
    }

    #[test]
    fn lexicon_shares() {
        let lex = LexiconSet::from_pairs([("sad", "NEG")]);
        assert_eq!(lexicon_features("sad sad ok", &lex), vec![2.0 / 3.0]);
        assert_eq!(lexicon_features("", &lex), vec![0.0]);

        let multi = LexiconSet::from_pairs([("cry", "NEG"), ("cry", "SAD"), ("cry", "NEG")]);
        assert_eq!(multi.categories(), ["NEG", "SAD"]);
        assert_eq!(lexicon_features("cry", &multi), vec![1.0, 1.0]);
    }

    #[test]
    fn lexicon_file_parsing() {
        let lex = LexiconSet::parse("sad\tNEG\nhappy\tPOS\nsad\tNEG\n\n").unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.categories_of("sad"), &[0]);
        assert!(matches!(LexiconSet::parse("sad NEG\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn concat_rules() {
        let e = [0.1, 0.2, 0.3, 0.4];
        let out = concat_features(&e, &[1.0, 2.0]).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(&out[..4], &e);
        assert_eq!(concat_features(&e, &[]).unwrap(), e.to_vec());
        assert!(concat_features(&e, &[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn bow_total_bounded_by_token_count(text in "[a-d ,.!]{0,40}") {
            let v = Vocabulary::from_words(vec!["a".into(), "b".into(), "c".into()], "t").unwrap();
            let bow = bow_vectorize(&text, &v);
            let tokens = tokenize(&text);
            let total: u32 = bow.counts.iter().sum();
            prop_assert!(total as usize <= tokens.len());
            let oov = tokens.iter().any(|t| v.rank(t).is_none());
            prop_assert_eq!(total as usize == tokens.len(), !oov);
        }

        #[test]
        fn lexicon_components_bounded(text in "[a-c ]{0,30}") {
            let lex = LexiconSet::from_pairs([("a", "X"), ("b", "X"), ("a", "Y")]);
            for v in lexicon_features(&text, &lex) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
