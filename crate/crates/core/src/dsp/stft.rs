use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror index `i` (possibly outside `[0, len)`) back into range, as with
/// reflect padding that excludes the edge sample.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered, Hann-windowed short-time Fourier transform.
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann_window(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// `1 + ⌊(len − 1) / hop⌋`: one frame centered on every hop position inside
    /// the signal.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            1 + (len - 1) / self.hop
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frame `t` of the reflect-padded signal, windowed; `out.len() == n_fft`.
    pub fn windowed_frame(&self, signal: &[f32], t: usize, out: &mut [Complex64]) {
        let start = (t * self.hop) as isize - (self.n_fft / 2) as isize;
        for (k, slot) in out.iter_mut().enumerate() {
            let v = signal[reflect(start + k as isize, signal.len())] as f64;
            *slot = Complex64::new(v * self.window[k], 0.0);
        }
    }

    /// Complex spectrum per frame, `frames × (n_fft/2 + 1)`.
    pub fn forward(&self, signal: &[f32]) -> Vec<Vec<Complex64>> {
        let mut buf = vec![Complex64::default(); self.n_fft];
        let mut scratch = vec![Complex64::default(); self.fwd.get_inplace_scratch_len()];
        (0..self.frame_count(signal.len()))
            .map(|t| {
                self.windowed_frame(signal, t, &mut buf);
                self.fwd.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Power spectrum `|X|²` per frame.
    pub fn power(&self, signal: &[f32]) -> Vec<Vec<f64>> {
        let mut buf = vec![Complex64::default(); self.n_fft];
        let mut scratch = vec![Complex64::default(); self.fwd.get_inplace_scratch_len()];
        (0..self.frame_count(signal.len()))
            .map(|t| {
                self.windowed_frame(signal, t, &mut buf);
                self.fwd.process_with_scratch(&mut buf, &mut scratch);
                buf[..self.bins()].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::forward`], producing `length`
    /// samples. Positions with negligible window coverage are left unscaled.
    pub fn inverse(&self, frames: &[Vec<Complex64>], length: usize) -> Vec<f32> {
        let n = self.n_fft;
        let half = (n / 2) as isize;
        let mut out = vec![0.0f64; length];
        let mut norm = vec![0.0f64; length];
        let mut buf = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); self.inv.get_inplace_scratch_len()];
        for (t, spec) in frames.iter().enumerate() {
            buf[..spec.len()].copy_from_slice(spec);
            for k in 1..n - spec.len() + 1 {
                buf[n - k] = spec[k].conj();
            }
            self.inv.process_with_scratch(&mut buf, &mut scratch);
            let start = (t * self.hop) as isize - half;
            for k in 0..n {
                let pos = start + k as isize;
                if pos < 0 || pos >= length as isize {
                    continue;
                }
                let w = self.window[k];
                out[pos as usize] += buf[k].re / n as f64 * w;
                norm[pos as usize] += w * w;
            }
        }
        out.iter()
            .zip(&norm)
            .map(|(&v, &w)| if w > 1e-8 { (v / w) as f32 } else { v as f32 })
            .collect()
    }
}
