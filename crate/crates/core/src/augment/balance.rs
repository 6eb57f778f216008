use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AudioAugOp, AugError, AugmentSpec};
use crate::data::{Emotion, Utterance, NUM_CLASSES};
use crate::text::{augment_text, normalize, Lexicon, TextAugOp};

/// Which operators balancing may draw from.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancePolicy {
    pub audio_ops: Vec<AudioAugOp>,
    pub text_ops: Vec<TextAugOp>,
    pub text_rate: f64,
}

impl Default for BalancePolicy {
    fn default() -> Self {
        Self {
            audio_ops: AudioAugOp::ALL.to_vec(),
            text_ops: TextAugOp::ALL.to_vec(),
            text_rate: 0.1,
        }
    }
}

/// How one synthetic record was derived; one JSON line per record in the
/// augmentation manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub source_id: String,
    pub label: Emotion,
    pub op: AudioAugOp,
    pub magnitude: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_op: Option<TextAugOp>,
    pub text_rate: f64,
    pub text_seed: u64,
}

#[derive(Clone, Debug)]
pub struct Balanced {
    /// Originals first, in input order, then synthetic records.
    pub utterances: Vec<Utterance>,
    pub provenance: Vec<Provenance>,
}

/// Tops up each class to `targets[class]` with augmented copies of its own
/// utterances. Originals are always kept; classes already at or above their
/// target are left as they are.
///
/// Synonym-based text operators are skipped when `lexicon` is empty.
pub fn balance_classes(
    records: &[Utterance],
    targets: &[usize; NUM_CLASSES],
    policy: &BalancePolicy,
    seed: u64,
    lexicon: &Lexicon,
) -> Result<Balanced, AugError> {
    assert!(!policy.audio_ops.is_empty(), "balancing needs at least one audio operator");
    let text_ops: Vec<TextAugOp> = policy
        .text_ops
        .iter()
        .copied()
        .filter(|op| !op.needs_lexicon() || !lexicon.is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::new();
    for label in Emotion::ALL {
        let sources: Vec<&Utterance> = records.iter().filter(|u| u.label == label).collect();
        let deficit = targets[label.index()].saturating_sub(sources.len());
        if deficit == 0 {
            continue;
        }
        if sources.is_empty() {
            return Err(AugError::EmptyClass(label));
        }
        for j in 0..deficit {
            let src = sources[j % sources.len()];
            let op = *policy.audio_ops.choose(&mut rng).expect("non-empty");
            let (lo, hi) = op.range();
            let magnitude = rng.random_range(lo..=hi);
            let audio_seed = rng.next_u64();
            let text_op = text_ops.choose(&mut rng).copied();
            let text_seed = rng.next_u64();
            plan.push((
                src,
                Provenance {
                    id: format!("{}_aug{:04}", src.id, j / sources.len()),
                    source_id: src.id.clone(),
                    label,
                    op,
                    magnitude,
                    seed: audio_seed,
                    text_op,
                    text_rate: policy.text_rate,
                    text_seed,
                },
            ));
        }
    }
    let synthetic: Vec<Utterance> = plan
        .par_iter()
        .map(|(src, p)| {
            let spec = AugmentSpec {
                op: p.op,
                magnitude: p.magnitude,
                seed: p.seed,
            };
            let waveform = spec.apply(&src.waveform)?;
            let transcript = match p.text_op {
                Some(op) => augment_text(&normalize(&src.transcript), op, p.text_rate, p.text_seed, lexicon)?.join(" "),
                None => src.transcript.clone(),
            };
            Ok(Utterance {
                id: p.id.clone(),
                label: src.label,
                transcript,
                waveform,
            })
        })
        .collect::<Result<_, AugError>>()?;
    let mut utterances = records.to_vec();
    utterances.extend(synthetic);
    Ok(Balanced {
        utterances,
        provenance: plan.into_iter().map(|(_, p)| p).collect(),
    })
}
