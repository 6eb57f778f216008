use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TextError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextAugOp {
    SynonymReplace,
    RandomInsert,
    RandomDelete,
    RandomSwap,
}

impl TextAugOp {
    pub const ALL: [TextAugOp; 4] = [
        TextAugOp::SynonymReplace,
        TextAugOp::RandomInsert,
        TextAugOp::RandomDelete,
        TextAugOp::RandomSwap,
    ];

    pub fn needs_lexicon(self) -> bool {
        matches!(self, TextAugOp::SynonymReplace | TextAugOp::RandomInsert)
    }
}

/// Word → synonyms table, loaded from `word<TAB>syn1,syn2,...` lines.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, synonyms: Vec<String>) {
        let synonyms: Vec<String> = synonyms.into_iter().filter(|s| !s.is_empty()).collect();
        if !synonyms.is_empty() {
            self.entries.insert(word.into(), synonyms);
        }
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn parse(text: &str) -> Result<Self, TextError> {
        let mut lex = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once('\t').ok_or_else(|| TextError::Parse {
                line: n + 1,
                reason: "expected word<TAB>syn1,syn2,...".into(),
            })?;
            lex.insert(word.trim(), syns.split(',').map(|s| s.trim().to_owned()).collect());
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(w, s)| format!("{w}\t{}\n", s.join(",")))
            .collect()
    }
}

/// One seeded token-level augmentation.
///
/// Replacement and swapping keep the length; insertion adds `⌈rate·len⌉`
/// synonyms; deletion drops each token with probability `rate` but never
/// empties a non-empty sentence.
pub fn augment_text<S: AsRef<str>>(
    tokens: &[S],
    op: TextAugOp,
    rate: f64,
    seed: u64,
    lexicon: &Lexicon,
) -> Result<Vec<String>, TextError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(TextError::InvalidRate(rate));
    }
    if op.needs_lexicon() && lexicon.is_empty() {
        return Err(TextError::EmptyLexicon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
    let n_ops = (rate * out.len() as f64).ceil() as usize;
    match op {
        TextAugOp::SynonymReplace => {
            for tok in out.iter_mut() {
                let syns = lexicon.synonyms(tok);
                if !syns.is_empty() && rng.random::<f64>() < rate {
                    *tok = syns.choose(&mut rng).expect("non-empty").clone();
                }
            }
        }
        TextAugOp::RandomInsert => {
            let eligible: Vec<String> = out.iter().filter(|t| !lexicon.synonyms(t).is_empty()).cloned().collect();
            if !eligible.is_empty() {
                for _ in 0..n_ops {
                    let src = eligible.choose(&mut rng).expect("non-empty");
                    let syn = lexicon.synonyms(src).choose(&mut rng).expect("non-empty").clone();
                    let at = rng.random_range(0..=out.len());
                    out.insert(at, syn);
                }
            }
        }
        TextAugOp::RandomDelete => {
            if out.len() > 1 && rate > 0.0 {
                let kept: Vec<String> = out.iter().filter(|_| rng.random::<f64>() >= rate).cloned().collect();
                out = if kept.is_empty() {
                    vec![out[rng.random_range(0..out.len())].clone()]
                } else {
                    kept
                };
            }
        }
        TextAugOp::RandomSwap => {
            if out.len() > 1 {
                for _ in 0..n_ops {
                    let i = rng.random_range(0..out.len());
                    let j = rng.random_range(0..out.len());
                    out.swap(i, j);
                }
            }
        }
    }
    Ok(out)
}
