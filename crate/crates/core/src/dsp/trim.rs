use super::{DspError, Waveform};

const FRAME: usize = 2048;
const HOP: usize = 512;

/// RMS of zero-padded frames centered on every hop position inside the signal.
pub fn frame_rms(samples: &[f32]) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let frames = 1 + (samples.len() - 1) / HOP;
    (0..frames)
        .map(|t| {
            let lo = (t * HOP).saturating_sub(FRAME / 2);
            let hi = (t * HOP + FRAME / 2).min(samples.len());
            let energy: f64 = samples[lo..hi].iter().map(|&s| (s as f64) * (s as f64)).sum();
            (energy / FRAME as f64).sqrt()
        })
        .collect()
}

/// Removes leading and trailing frames whose RMS is more than `top_db` below
/// the loudest frame.
///
/// The kept region begins where the last leading silent frame ends and stops
/// where the first trailing silent frame begins, so every removed sample lies
/// in a silent frame.
pub fn trim_silence(w: &Waveform, top_db: f64) -> Result<Waveform, DspError> {
    if w.samples.is_empty() {
        return Err(DspError::Empty);
    }
    let rms = frame_rms(&w.samples);
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(DspError::AllSilent { top_db });
    }
    let threshold = peak * 10f64.powf(-top_db / 20.0);
    let loud = |r: &f64| *r >= threshold;
    let t0 = rms.iter().position(loud).ok_or(DspError::AllSilent { top_db })?;
    let t1 = rms.iter().rposition(loud).expect("a loud frame exists");
    let len = w.samples.len();
    let half = FRAME / 2;
    let start = if t0 == 0 { 0 } else { ((t0 - 1) * HOP + half).min(len) };
    let end = if t1 + 1 >= rms.len() {
        len
    } else {
        ((t1 + 1) * HOP).saturating_sub(half)
    };
    let (start, end) = if start < end {
        (start, end)
    } else {
        ((t0 * HOP).saturating_sub(half), (t1 * HOP + half).min(len))
    };
    Ok(Waveform::new(w.samples[start..end].to_vec(), w.sample_rate))
}
