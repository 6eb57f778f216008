use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dsp::Stft;

pub(crate) const N_FFT: usize = 2048;
pub(crate) const HOP: usize = 512;

fn wrap(phase: f64) -> f64 {
    phase - 2.0 * PI * (phase / (2.0 * PI)).round()
}

/// Phase-vocoder time scaling of a spectrogram by `rate` (> 1 shortens).
fn phase_vocoder(frames: &[Vec<Complex64>], rate: f64, hop: usize, n_fft: usize) -> Vec<Vec<Complex64>> {
    let bins = frames.first().map_or(0, Vec::len);
    let advance: Vec<f64> = (0..bins).map(|k| 2.0 * PI * hop as f64 * k as f64 / n_fft as f64).collect();
    let zero = vec![Complex64::default(); bins];
    let at = |i: usize| frames.get(i).unwrap_or(&zero);
    let mut acc: Vec<f64> = at(0).iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let mut t = 0.0f64;
    while t < frames.len() as f64 {
        let i = t.floor() as usize;
        let alpha = t - i as f64;
        let (c0, c1) = (at(i), at(i + 1));
        let col = (0..bins)
            .map(|k| {
                let mag = (1.0 - alpha) * c0[k].norm() + alpha * c1[k].norm();
                let z = Complex64::from_polar(mag, acc[k]);
                let dphi = wrap(c1[k].arg() - c0[k].arg() - advance[k]);
                acc[k] += advance[k] + dphi;
                z
            })
            .collect();
        out.push(col);
        t += rate;
    }
    out
}

/// Pitch-preserving stretch; output has `round(len / rate)` samples.
pub(crate) fn stretch(samples: &[f32], rate: f64) -> Vec<f32> {
    let stft = Stft::new(N_FFT, HOP);
    let spec = stft.forward(samples);
    let stretched = phase_vocoder(&spec, rate, HOP, N_FFT);
    let len = (samples.len() as f64 / rate).round() as usize;
    stft.inverse(&stretched, len)
}
