/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on an evenly spaced mel grid, each scaled by
/// `2 / (upper_mel − lower_mel)`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Row-major `(n_mels, bins)`.
    pub weights: Vec<f64>,
    /// Nonzero bin range of each filter.
    spans: Vec<(usize, usize)>,
    mel_points: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Self {
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let mel_points: Vec<f64> = (0..n_mels + 2)
            .map(|i| lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)
            .collect();
        let bin_mels: Vec<f64> = (0..bins)
            .map(|k| hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64))
            .collect();
        let mut weights = vec![0.0; n_mels * bins];
        let mut spans = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
            let scale = 2.0 / (right - left);
            let row = &mut weights[m * bins..(m + 1) * bins];
            let (mut first, mut last) = (bins, 0);
            for (k, &bm) in bin_mels.iter().enumerate() {
                let rise = (bm - left) / (center - left);
                let fall = (right - bm) / (right - center);
                let w = rise.min(fall).max(0.0);
                if w > 0.0 {
                    row[k] = w * scale;
                    first = first.min(k);
                    last = k + 1;
                }
            }
            spans.push(if first < last { (first, last) } else { (0, 0) });
        }
        Self {
            n_mels,
            bins,
            fmin,
            fmax,
            weights,
            spans,
            mel_points,
        }
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Peak frequency of each filter in Hz.
    pub fn centers_hz(&self) -> Vec<f64> {
        self.mel_points[1..=self.n_mels].iter().map(|&m| mel_to_hz(m)).collect()
    }

    /// Filter energies for one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (a, b) = self.spans[m];
            let row = &self.filter(m)[a..b];
            *o = row.iter().zip(&power[a..b]).map(|(w, p)| w * p).sum();
        }
    }
}
