//! Waveform augmentation and class balancing.

mod balance;
mod ops;
mod vocoder;


use serde::{Deserialize, Serialize};

use crate::data::Emotion;
use crate::dsp::Waveform;
use crate::text::TextError;

pub use balance::{balance_classes, BalancePolicy, Balanced, Provenance};
pub use ops::{add_noise, pitch_shift, time_shift, time_stretch, volume};
#[cfg(test)]
use ops::{add_noise_unchecked, pitch_shift_unchecked, volume_unchecked};

#[derive(Debug, thiserror::Error)]
pub enum AugError {
    #[error("stretch rate {rate} outside [0.8, 1.25]")]
    RateOutOfRange { rate: f64 },
    #[error("{op} magnitude {value} outside [{min}, {max}]")]
    MagnitudeOutOfRange {
        op: AudioAugOp,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("class {0} has no source samples to augment")]
    EmptyClass(Emotion),
    #[error("waveform is empty")]
    Empty,
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioAugOp {
    TimeStretch,
    PitchShift,
    AddNoise,
    TimeShift,
    Volume,
}

impl AudioAugOp {
    pub const ALL: [AudioAugOp; 5] = [
        AudioAugOp::TimeStretch,
        AudioAugOp::PitchShift,
        AudioAugOp::AddNoise,
        AudioAugOp::TimeShift,
        AudioAugOp::Volume,
    ];

    /// Accepted magnitude interval: stretch rate, semitones, SNR in dB, shift
    /// fraction, gain in dB.
    pub fn range(self) -> (f64, f64) {
        match self {
            AudioAugOp::TimeStretch => (0.8, 1.25),
            AudioAugOp::PitchShift => (-2.0, 2.0),
            AudioAugOp::AddNoise => (15.0, 30.0),
            AudioAugOp::TimeShift => (-0.1, 0.1),
            AudioAugOp::Volume => (-6.0, 6.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AudioAugOp::TimeStretch => "time_stretch",
            AudioAugOp::PitchShift => "pitch_shift",
            AudioAugOp::AddNoise => "add_noise",
            AudioAugOp::TimeShift => "time_shift",
            AudioAugOp::Volume => "volume",
        }
    }
}

impl std::fmt::Display for AudioAugOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_range(op: AudioAugOp, value: f64) -> Result<(), AugError> {
    let (min, max) = op.range();
    if (min..=max).contains(&value) {
        Ok(())
    } else if op == AudioAugOp::TimeStretch {
        Err(AugError::RateOutOfRange { rate: value })
    } else {
        Err(AugError::MagnitudeOutOfRange { op, value, min, max })
    }
}

/// A fully determined augmentation: operator, magnitude and noise seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub op: AudioAugOp,
    pub magnitude: f64,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn apply(&self, w: &Waveform) -> Result<Waveform, AugError> {
        match self.op {
            AudioAugOp::TimeStretch => time_stretch(w, self.magnitude),
            AudioAugOp::PitchShift => pitch_shift(w, self.magnitude),
            AudioAugOp::AddNoise => add_noise(w, self.magnitude, self.seed),
            AudioAugOp::TimeShift => time_shift(w, self.magnitude),
            AudioAugOp::Volume => volume(w, self.magnitude),
        }
    }
}
