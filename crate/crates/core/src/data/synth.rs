use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, DataError, Emotion, ManifestRecord, Origin, NUM_CLASSES};
use crate::dsp::{write_wav, DspError, Waveform};

/// Recipe for a small corpus whose classes are separable from audio and from text.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub counts: [usize; NUM_CLASSES],
    pub min_secs: f64,
    pub max_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            counts: [20; NUM_CLASSES],
            min_secs: 1.0,
            max_secs: 2.0,
            sample_rate: 16_000,
            seed: 0,
        }
    }
}

const FILLER: [&str; 12] = ["i", "you", "the", "it", "is", "was", "so", "really", "just", "that", "we", "today"];

fn keywords(label: Emotion) -> [&'static str; 6] {
    match label {
        Emotion::Anger => ["furious", "hate", "angry", "stop", "unfair", "ridiculous"],
        Emotion::Excited => ["wow", "amazing", "incredible", "yes", "fantastic", "awesome"],
        Emotion::Happy => ["glad", "nice", "lovely", "smile", "pleased", "good"],
        Emotion::Neutral => ["okay", "fine", "maybe", "schedule", "report", "meeting"],
        Emotion::Sad => ["sorry", "miss", "lonely", "cry", "tired", "lost"],
    }
}

/// Synonym table over the keyword pools: each keyword maps to the other
/// keywords of its class.
pub fn synthetic_lexicon() -> String {
    let mut out = String::new();
    for label in Emotion::ALL {
        let pool = keywords(label);
        for w in pool {
            let syns: Vec<&str> = pool.iter().copied().filter(|s| *s != w).collect();
            out.push_str(&format!("{w}\t{}\n", syns.join(",")));
        }
    }
    out
}

/// Class-specific signal: each class has its own pitch range, harmonic
/// structure and modulation.
fn synthesize(label: Emotion, secs: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = (secs * rate as f64) as usize;
    let jitter = 1.0 + rng.random_range(-0.05..0.05);
    let gain = 1.0 + rng.random_range(-0.2..0.2);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let sr = rate as f64;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let frac = i as f64 / n as f64;
            let (f0, harmonics, amp, am, hiss): (f64, usize, f64, f64, f64) = match label {
                Emotion::Anger => (180.0, 8, 0.6, 0.0, 0.05),
                Emotion::Excited => (300.0 + 300.0 * frac, 3, 0.5, 0.0, 0.01),
                Emotion::Happy => (440.0, 2, 0.45, 0.5 * (2.0 * PI * 5.0 * t).sin(), 0.0),
                Emotion::Neutral => (220.0, 1, 0.3, 0.0, 0.0),
                Emotion::Sad => (120.0 - 20.0 * frac, 2, 0.2, 0.0, 0.0),
            };
            phase += 2.0 * PI * f0 * jitter / sr;
            let tone: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
            let s = gain * amp * (1.0 + am) * tone / 1.5 + hiss * noise.sample(rng) + 0.002 * noise.sample(rng);
            s.clamp(-1.0, 1.0) as f32
        })
        .collect()
}

fn transcript(label: Emotion, rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(4..=10);
    let pool = keywords(label);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.5) {
                *pool.choose(rng).expect("non-empty")
            } else {
                *FILLER.choose(rng).expect("non-empty")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn dsp_to_io(e: DspError) -> DataError {
    match e {
        DspError::Io(e) => DataError::Io(e),
        other => DataError::Io(std::io::Error::other(other.to_string())),
    }
}

/// Writes `wavs/*.wav`, `manifest.jsonl` and `lexicon.tsv` under `out_dir` and
/// returns the manifest path. Identical specs produce byte-identical output.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wavs");
    std::fs::create_dir_all(&wav_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    for label in Emotion::ALL {
        for i in 0..spec.counts[label.index()] {
            let id = format!("synth_{label}_{i:03}");
            let secs = rng.random_range(spec.min_secs..=spec.max_secs);
            let lead = vec![0.0f32; (rng.random_range(0.05..0.2) * spec.sample_rate as f64) as usize];
            let tail = vec![0.0f32; (rng.random_range(0.05..0.2) * spec.sample_rate as f64) as usize];
            let mut samples = lead;
            samples.extend(synthesize(label, secs, spec.sample_rate, &mut rng));
            samples.extend(tail);
            let rel = PathBuf::from("wavs").join(format!("{id}.wav"));
            write_wav(out_dir.join(&rel), &Waveform::new(samples, spec.sample_rate)).map_err(dsp_to_io)?;
            records.push(ManifestRecord {
                id,
                wav_path: rel,
                transcript: transcript(label, &mut rng),
                label,
                origin: Origin::Original,
                source_id: None,
            });
        }
    }
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    std::fs::write(out_dir.join("lexicon.tsv"), synthetic_lexicon())?;
    Ok(manifest)
}
