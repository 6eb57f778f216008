//! Waveform handling and the MFCC front-end.

mod cache;
mod mel;
mod mfcc;
mod resample;
mod stft;
mod trim;
mod wav;


use serde::{Deserialize, Serialize};

pub use cache::FeatureCache;
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use mfcc::{mfcc, MfccExtractor, MfccMatrix};
pub(crate) use resample::{rational_approx, resample_rational};
pub use resample::resample;
pub use stft::{hann_window, Stft};
pub use trim::{frame_rms, trim_silence};
pub use wav::{read_wav, write_wav};

pub const TARGET_RATE: u32 = 16_000;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("unsupported sample rate {rate} Hz (expected 8000..=192000)")]
    UnsupportedRate { rate: u32 },
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("waveform is empty")]
    Empty,
    #[error("every frame is more than {top_db} dB below the loudest frame")]
    AllSilent { top_db: f64 },
    #[error("waveform too short for a single analysis frame")]
    TooShort,
    #[error("expected {expected} Hz input, got {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("feature cache parameters differ from the requested extraction settings")]
    CacheParamsMismatch,
    #[error("corrupt feature record {path}: {reason}")]
    CorruptRecord { path: String, reason: String },
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Every setting that influences an extracted feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfccParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub frames: usize,
    pub top_db: f64,
    pub log_floor: f64,
}

impl Default for MfccParams {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_RATE,
            n_fft: 2048,
            hop: 512,
            n_mels: 40,
            n_mfcc: 13,
            fmin: 0.0,
            fmax: 8000.0,
            frames: 740,
            top_db: 20.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccParams {
    /// Short digest identifying these settings, used to key feature caches.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(&Sha256::digest(json)[..8])
    }
}

/// Resample to 16 kHz, trim silent edges and compute the padded MFCC matrix.
pub fn extract_features(w: &Waveform, extractor: &MfccExtractor) -> Result<MfccMatrix, DspError> {
    let params = extractor.params();
    let w = resample(w, params.sample_rate)?;
    let w = trim_silence(&w, params.top_db)?;
    extractor.compute(&w)
}
