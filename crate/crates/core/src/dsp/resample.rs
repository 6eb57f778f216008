use super::{DspError, Waveform};

const ZERO_CROSSINGS: f64 = 32.0;
const ROLLOFF: f64 = 0.9;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples a waveform to `target` Hz. Output length is
/// `round(len · target / source)`.
pub fn resample(w: &Waveform, target: u32) -> Result<Waveform, DspError> {
    for rate in [w.sample_rate, target] {
        if !(8_000..=192_000).contains(&rate) {
            return Err(DspError::UnsupportedRate { rate });
        }
    }
    if w.samples.is_empty() {
        return Err(DspError::Empty);
    }
    if w.sample_rate == target {
        return Ok(w.clone());
    }
    let g = gcd(w.sample_rate as u64, target as u64);
    let samples = resample_rational(&w.samples, target as u64 / g, w.sample_rate as u64 / g);
    Ok(Waveform::new(samples, target))
}

/// Best rational approximation `up / down` of `ratio` with `down <= 1000`.
pub(crate) fn rational_approx(ratio: f64) -> (u64, u64) {
    assert!(ratio > 0.0 && ratio.is_finite(), "resampling ratio must be positive");
    let mut best = (1, 1);
    let mut best_err = f64::INFINITY;
    for down in 1..=1000u64 {
        let up = ((ratio * down as f64).round() as u64).max(1);
        let err = (up as f64 / down as f64 - ratio).abs();
        if err < best_err - 1e-15 {
            best = (up, down);
            best_err = err;
        }
    }
    let g = gcd(best.0, best.1);
    (best.0 / g, best.1 / g)
}

/// Polyphase Kaiser-windowed sinc resampling by the exact ratio `up / down`.
pub(crate) fn resample_rational(src: &[f32], up: u64, down: u64) -> Vec<f32> {
    if up == down {
        return src.to_vec();
    }
    let out_len = ((src.len() as u128 * up as u128 + down as u128 / 2) / down as u128) as usize;

    // Cutoff in cycles per input sample (input Nyquist = 0.5).
    let fc = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let reach = half_width.ceil() as i64;
    let norm = bessel_i0(KAISER_BETA);

    // taps[p][k] weights input sample `i0 - reach + 1 + k` for an output whose
    // position is `i0 + p / up` input samples.
    let width = 2 * reach as usize;
    let taps: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (0..width)
                .map(|k| {
                    let x = (k as i64 - reach + 1) as f64 - frac;
                    let r = x / half_width;
                    if r.abs() >= 1.0 {
                        return 0.0;
                    }
                    let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                    2.0 * fc * sinc(2.0 * fc * x) * win
                })
                .collect()
        })
        .collect();

    let n = src.len() as i64;
    (0..out_len)
        .map(|j| {
            let pos = j as u64 * down;
            let i0 = (pos / up) as i64;
            let phase = &taps[(pos % up) as usize];
            let first = i0 - reach + 1;
            let mut acc = 0.0;
            for (k, &h) in phase.iter().enumerate() {
                let idx = first + k as i64;
                if (0..n).contains(&idx) {
                    acc += h * src[idx as usize] as f64;
                }
            }
            acc as f32
        })
        .collect()
}
