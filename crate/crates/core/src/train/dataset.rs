use rayon::prelude::*;

use super::TrainError;
use crate::data::{ManifestRecord, Origin, NUM_CLASSES};
use crate::dsp::{extract_features, read_wav, FeatureCache, MfccExtractor, MfccMatrix};
use crate::tensor::{Real, Tensor};
use crate::text::{encode, normalize, TokenSequence, Vocabulary};

/// Model-ready examples: MFCC matrices and token ids stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
    pub sources: Vec<Option<String>>,
    pub frames: usize,
    pub n_mfcc: usize,
    pub max_tokens: usize,
    mfcc: Vec<f32>,
    tokens: Vec<usize>,
}

impl Dataset {
    pub fn new(frames: usize, n_mfcc: usize, max_tokens: usize) -> Self {
        Self {
            frames,
            n_mfcc,
            max_tokens,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        id: impl Into<String>,
        label: usize,
        origin: Origin,
        source: Option<String>,
        mfcc: &[f32],
        tokens: &[usize],
    ) -> Result<(), TrainError> {
        let id = id.into();
        if mfcc.len() != self.frames * self.n_mfcc || tokens.len() != self.max_tokens || label >= NUM_CLASSES {
            return Err(TrainError::InvalidData(format!(
                "{id}: {} feature values, {} tokens, label {label}",
                mfcc.len(),
                tokens.len()
            )));
        }
        self.ids.push(id);
        self.labels.push(label);
        self.origins.push(origin);
        self.sources.push(source);
        self.mfcc.extend_from_slice(mfcc);
        self.tokens.extend_from_slice(tokens);
        Ok(())
    }

    pub fn mfcc(&self, i: usize) -> &[f32] {
        let n = self.frames * self.n_mfcc;
        &self.mfcc[i * n..(i + 1) * n]
    }

    pub fn tokens(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.max_tokens..(i + 1) * self.max_tokens]
    }

    /// `(mfcc (b, frames, n_mfcc), token ids (b · max_tokens), labels)`.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>, Vec<usize>) {
        let mut mfcc = Vec::with_capacity(idx.len() * self.frames * self.n_mfcc);
        let mut tokens = Vec::with_capacity(idx.len() * self.max_tokens);
        for &i in idx {
            mfcc.extend(self.mfcc(i).iter().map(|&v| T::of(v as f64)));
            tokens.extend_from_slice(self.tokens(i));
        }
        let mfcc = Tensor::new(vec![idx.len(), self.frames, self.n_mfcc], mfcc).expect("consistent lengths");
        (mfcc, tokens, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::new(self.frames, self.n_mfcc, self.max_tokens);
        for &i in idx {
            out.push(
                self.ids[i].clone(),
                self.labels[i],
                self.origins[i],
                self.sources[i].clone(),
                self.mfcc(i),
                self.tokens(i),
            )
            .expect("rows of a valid dataset");
        }
        out
    }

    pub fn originals(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.origins[i] == Origin::Original).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Decodes and featurizes every record in parallel, reusing `cache` entries
/// (keyed by record id) when present.
pub fn build_dataset(
    records: &[ManifestRecord],
    extractor: &MfccExtractor,
    cache: Option<&FeatureCache>,
    vocab: &Vocabulary,
) -> Result<Dataset, TrainError> {
    let features: Vec<(MfccMatrix, TokenSequence)> = records
        .par_iter()
        .map(|r| {
            let mfcc = match cache.map(|c| c.get(&r.id)).transpose()?.flatten() {
                Some(m) => m,
                None => {
                    let m = extract_features(&read_wav(&r.wav_path)?, extractor)
                        .map_err(|e| TrainError::Record(r.id.clone(), e.to_string()))?;
                    if let Some(c) = cache {
                        c.put(&r.id, &m)?;
                    }
                    m
                }
            };
            Ok((mfcc, encode(vocab, &normalize(&r.transcript))))
        })
        .collect::<Result<_, TrainError>>()?;
    let p = extractor.params();
    let mut data = Dataset::new(p.frames, p.n_mfcc, crate::text::MAX_TOKENS);
    for (r, (m, t)) in records.iter().zip(features) {
        data.push(r.id.clone(), r.label.index(), r.origin, r.source_id.clone(), &m.values, &t.ids)?;
    }
    Ok(data)
}

/// Vocabulary over every transcript of `records`.
pub fn build_vocabulary(records: &[ManifestRecord]) -> Result<Vocabulary, TrainError> {
    let corpus: Vec<Vec<String>> = records.iter().map(|r| normalize(&r.transcript)).collect();
    Ok(Vocabulary::build(&corpus)?)
}
