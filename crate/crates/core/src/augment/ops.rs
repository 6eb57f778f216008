use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_range, vocoder, AudioAugOp, AugError};
use crate::dsp::{rational_approx, resample_rational, Waveform};

fn clip(samples: impl Iterator<Item = f64>) -> Vec<f32> {
    samples.map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn non_empty(w: &Waveform) -> Result<(), AugError> {
    if w.samples.is_empty() {
        Err(AugError::Empty)
    } else {
        Ok(())
    }
}

/// Phase-vocoder stretch by `rate` in `[0.8, 1.25]`; pitch is kept.
pub fn time_stretch(w: &Waveform, rate: f64) -> Result<Waveform, AugError> {
    check_range(AudioAugOp::TimeStretch, rate)?;
    non_empty(w)?;
    Ok(Waveform::new(clip(vocoder::stretch(&w.samples, rate).into_iter().map(f64::from)), w.sample_rate))
}

/// Shift by `semitones` in `[-2, 2]` keeping the length exactly.
pub fn pitch_shift(w: &Waveform, semitones: f64) -> Result<Waveform, AugError> {
    check_range(AudioAugOp::PitchShift, semitones)?;
    non_empty(w)?;
    Ok(pitch_shift_unchecked(w, semitones))
}

pub(crate) fn pitch_shift_unchecked(w: &Waveform, semitones: f64) -> Waveform {
    if semitones == 0.0 {
        return w.clone();
    }
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = vocoder::stretch(&w.samples, rate);
    // Playing the stretched signal back `1/rate` times faster restores the duration.
    let (up, down) = rational_approx(rate);
    let mut shifted = resample_rational(&stretched, up, down);
    shifted.resize(w.samples.len(), 0.0);
    Waveform::new(clip(shifted.into_iter().map(f64::from)), w.sample_rate)
}

/// Mixes in white Gaussian noise at exactly `snr_db` in `[15, 30]`, then clips.
pub fn add_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform, AugError> {
    check_range(AudioAugOp::AddNoise, snr_db)?;
    non_empty(w)?;
    Ok(add_noise_unchecked(w, snr_db, seed))
}

pub(crate) fn add_noise_unchecked(w: &Waveform, snr_db: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..w.samples.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = w.samples.len() as f64;
    let p_signal = w.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n;
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / n;
    let scale = if p_noise > 0.0 {
        (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
    } else {
        0.0
    };
    Waveform::new(
        clip(w.samples.iter().zip(&noise).map(|(&s, &v)| s as f64 + scale * v)),
        w.sample_rate,
    )
}

/// Circular shift by `round(shift · len)` samples, `shift` in `[-0.1, 0.1]`.
/// Positive shifts move content later.
pub fn time_shift(w: &Waveform, shift: f64) -> Result<Waveform, AugError> {
    check_range(AudioAugOp::TimeShift, shift)?;
    non_empty(w)?;
    let len = w.samples.len() as i64;
    let k = (shift * len as f64).round() as i64;
    let mut out = w.samples.clone();
    out.rotate_right(k.rem_euclid(len) as usize);
    Ok(Waveform::new(out, w.sample_rate))
}

/// Scales by `10^(gain_db / 20)`, `gain_db` in `[-6, 6]`, then clips.
pub fn volume(w: &Waveform, gain_db: f64) -> Result<Waveform, AugError> {
    check_range(AudioAugOp::Volume, gain_db)?;
    Ok(volume_unchecked(w, gain_db))
}

pub(crate) fn volume_unchecked(w: &Waveform, gain_db: f64) -> Waveform {
    let g = 10f64.powf(gain_db / 20.0);
    Waveform::new(clip(w.samples.iter().map(|&s| s as f64 * g)), w.sample_rate)
}
