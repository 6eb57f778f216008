//! Labels, manifests and the synthetic stand-in corpus.

mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, DspError, Waveform};

pub use manifest::{class_histogram, load_manifest, write_manifest, DataError, ManifestRecord, Origin};
pub use synth::{generate_synthetic_corpus, synthetic_lexicon, SyntheticCorpusSpec};

pub const NUM_CLASSES: usize = 5;

/// The five emotion classes, in one-hot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Excited,
    Happy,
    Neutral,
    Sad,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [
        Emotion::Anger,
        Emotion::Excited,
        Emotion::Happy,
        Emotion::Neutral,
        Emotion::Sad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Excited => "excited",
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown emotion label {s:?}"))
    }
}

/// A decoded utterance: the unit that augmentation and feature extraction consume.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Emotion,
    pub transcript: String,
    pub waveform: Waveform,
}

impl Utterance {
    /// Decodes the record's audio file.
    pub fn load(record: &ManifestRecord) -> Result<Self, DspError> {
        Ok(Self {
            id: record.id.clone(),
            label: record.label,
            transcript: record.transcript.clone(),
            waveform: read_wav(&record.wav_path)?,
        })
    }
}

#[cfg(test)]
mod tests;
