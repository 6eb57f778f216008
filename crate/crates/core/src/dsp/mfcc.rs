use super::{DspError, MelFilterbank, MfccParams, Stft, Waveform};

/// `(frames, n_mfcc)` cepstral matrix; rows from `valid_frames` on are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MfccMatrix {
    pub values: Vec<f32>,
    pub frames: usize,
    pub coeffs: usize,
    pub valid_frames: usize,
}

impl MfccMatrix {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.coeffs..(t + 1) * self.coeffs]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.coeffs)
    }
}

/// Precomputed FFT plan, filterbank and DCT basis for one parameter set.
pub struct MfccExtractor {
    params: MfccParams,
    stft: Stft,
    bank: MelFilterbank,
    /// Row-major `(n_mfcc, n_mels)` orthonormal DCT-II basis.
    dct: Vec<f64>,
}

impl MfccExtractor {
    pub fn new(params: MfccParams) -> Self {
        let stft = Stft::new(params.n_fft, params.hop);
        let bank = MelFilterbank::new(params.n_mels, params.n_fft, params.sample_rate, params.fmin, params.fmax);
        let n = params.n_mels as f64;
        let dct = (0..params.n_mfcc)
            .flat_map(|k| {
                let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                (0..params.n_mels).map(move |i| {
                    scale * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
                })
            })
            .collect();
        Self { params, stft, bank, dct }
    }

    pub fn params(&self) -> &MfccParams {
        &self.params
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// MFCCs of a waveform already at the configured rate.
    pub fn compute(&self, w: &Waveform) -> Result<MfccMatrix, DspError> {
        let p = &self.params;
        if w.sample_rate != p.sample_rate {
            return Err(DspError::RateMismatch {
                expected: p.sample_rate,
                actual: w.sample_rate,
            });
        }
        if w.samples.is_empty() {
            return Err(DspError::TooShort);
        }
        let power = self.stft.power(&w.samples);
        let valid = power.len().min(p.frames);
        let mut values = vec![0.0f32; p.frames * p.n_mfcc];
        let mut mel = vec![0.0; p.n_mels];
        for (t, spec) in power.iter().take(valid).enumerate() {
            self.bank.apply(spec, &mut mel);
            mel.iter_mut().for_each(|v| *v = v.max(p.log_floor).ln());
            for k in 0..p.n_mfcc {
                let basis = &self.dct[k * p.n_mels..(k + 1) * p.n_mels];
                let c: f64 = basis.iter().zip(&mel).map(|(b, m)| b * m).sum();
                values[t * p.n_mfcc + k] = c as f32;
            }
        }
        Ok(MfccMatrix {
            values,
            frames: p.frames,
            coeffs: p.n_mfcc,
            valid_frames: valid,
        })
    }
}

/// MFCCs with the default 16 kHz / 2048 / 512 / 40-mel / 13-coefficient setup.
pub fn mfcc(w: &Waveform) -> Result<MfccMatrix, DspError> {
    MfccExtractor::new(MfccParams::default()).compute(w)
}
