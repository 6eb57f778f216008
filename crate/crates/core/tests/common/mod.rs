//! Reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use emotech::dsp::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ten fixed waveforms at 16 kHz: sines, linear chirps and seeded noise.
pub fn mfcc_fixtures() -> Vec<(String, Waveform)> {
    let sr = 16_000.0;
    let mut out = Vec::new();
    for (i, (f, secs, amp)) in [(220.0, 0.5, 0.5), (1000.0, 0.37, 0.2), (3150.0, 0.81, 0.9)].into_iter().enumerate() {
        let n = (sr * secs) as usize;
        let s = (0..n).map(|k| (amp * (2.0 * PI * f * k as f64 / sr).sin()) as f32).collect();
        out.push((format!("sine{i}"), Waveform::new(s, 16_000)));
    }
    for (i, (f0, f1, secs)) in [(100.0, 4000.0, 0.6), (7000.0, 300.0, 0.45), (500.0, 1500.0, 0.2)].into_iter().enumerate() {
        let n = (sr * secs) as usize;
        let dur = n as f64 / sr;
        let s = (0..n)
            .map(|k| {
                let t = k as f64 / sr;
                (0.6 * (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t)).sin()) as f32
            })
            .collect();
        out.push((format!("chirp{i}"), Waveform::new(s, 16_000)));
    }
    for (i, (seed, len, amp)) in [(1u64, 8000usize, 0.5), (2, 5120, 0.05), (3, 700, 1.0), (4, 9999, 0.3)].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..len).map(|_| rng.random_range(-amp..amp) as f32).collect();
        out.push((format!("noise{i}"), Waveform::new(s, 16_000)));
    }
    out
}

/// MFCCs by direct DFT, per-bin triangular weights and explicit DCT sums.
/// Returns `valid_frames × 13` rows.
pub fn slow_mfcc(x: &[f32]) -> Vec<[f64; 13]> {
    const N: usize = 2048;
    const HOP: usize = 512;
    const MELS: usize = 40;
    let len = x.len() as isize;
    let frames = x.len().div_ceil(HOP);
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let top = mel(8000.0);
    let points: Vec<f64> = (0..MELS + 2).map(|i| top * i as f64 / (MELS + 1) as f64).collect();
    let cos_table: Vec<f64> = (0..N).map(|k| (2.0 * PI * k as f64 / N as f64).cos()).collect();
    let sin_table: Vec<f64> = (0..N).map(|k| (2.0 * PI * k as f64 / N as f64).sin()).collect();

    let mut rows = Vec::with_capacity(frames);
    for t in 0..frames {
        let frame: Vec<f64> = (0..N)
            .map(|k| {
                let mut i = (t * HOP + k) as isize - (N / 2) as isize;
                while i < 0 || i >= len {
                    if i < 0 {
                        i = -i;
                    }
                    if i >= len {
                        i = 2 * (len - 1) - i;
                    }
                }
                let w = 0.5 * (1.0 - (2.0 * PI * k as f64 / N as f64).cos());
                x[i as usize] as f64 * w
            })
            .collect();
        let power: Vec<f64> = (0..=N / 2)
            .map(|j| {
                let (mut re, mut im) = (0.0, 0.0);
                for (k, &v) in frame.iter().enumerate() {
                    let idx = (j * k) % N;
                    re += v * cos_table[idx];
                    im -= v * sin_table[idx];
                }
                re * re + im * im
            })
            .collect();
        let log_mel: Vec<f64> = (0..MELS)
            .map(|m| {
                let (a, b, c) = (points[m], points[m + 1], points[m + 2]);
                let mut e = 0.0;
                for (j, p) in power.iter().enumerate() {
                    let mj = mel(j as f64 * 16_000.0 / N as f64);
                    let w = if mj > a && mj <= b {
                        (mj - a) / (b - a)
                    } else if mj > b && mj < c {
                        (c - mj) / (c - b)
                    } else {
                        0.0
                    };
                    e += w * 2.0 / (c - a) * p;
                }
                e.max(1e-10).ln()
            })
            .collect();
        let mut row = [0.0; 13];
        for (k, r) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (n, v) in log_mel.iter().enumerate() {
                s += v * (PI * k as f64 * (n as f64 + 0.5) / MELS as f64).cos();
            }
            let norm = if k == 0 { (1.0 / MELS as f64).sqrt() } else { (2.0 / MELS as f64).sqrt() };
            *r = s * norm;
        }
        rows.push(row);
    }
    rows
}
