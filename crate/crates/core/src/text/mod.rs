//! Transcript normalization, vocabulary, fixed-length encoding and token-level
//! augmentation.

mod augment;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use augment::{augment_text, Lexicon, TextAugOp};

pub const MAX_TOKENS: usize = 98;
pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const OOV_TOKEN: &str = "<oov>";

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("synonym operation requested with an empty lexicon")]
    EmptyLexicon,
    #[error("augmentation rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, maps everything outside `[a-z0-9']` to a space and splits.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Word ↔ id table. Id 0 is padding and id 1 stands for unknown words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Ids ordered by descending corpus frequency, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<Self, TextError> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words = [PAD_TOKEN, OOV_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(w, _)| w))
            .map(str::to_owned)
            .collect();
        Ok(Self::from_words(words))
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().skip(2).map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// `id<TAB>word` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{w}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, TextError> {
        let mut words = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |reason: &str| TextError::Parse {
                line: n + 1,
                reason: reason.to_owned(),
            };
            let (id, word) = line.split_once('\t').ok_or_else(|| parse_err("expected id<TAB>word"))?;
            let id: usize = id.trim().parse().map_err(|_| parse_err("id is not an integer"))?;
            if id != words.len() {
                return Err(parse_err("ids must be contiguous from 0"));
            }
            words.push(word.to_owned());
        }
        if words.len() < 2 {
            return Err(TextError::EmptyCorpus);
        }
        Ok(Self::from_words(words))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized table, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

/// Fixed-length id sequence; positions from `valid_len` on are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub valid_len: usize,
}

/// Maps tokens to ids, keeps the first 98 and right-pads with zeros.
pub fn encode<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> TokenSequence {
    let mut ids: Vec<usize> = tokens.iter().take(MAX_TOKENS).map(|t| vocab.id(t.as_ref())).collect();
    let valid_len = ids.len();
    ids.resize(MAX_TOKENS, PAD_ID);
    TokenSequence { ids, valid_len }
}

pub fn decode(vocab: &Vocabulary, seq: &TokenSequence) -> Vec<String> {
    seq.ids[..seq.valid_len]
        .iter()
        .map(|&id| vocab.word(id).unwrap_or(OOV_TOKEN).to_owned())
        .collect()
}
