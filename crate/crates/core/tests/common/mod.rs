//! Test-only oracles, independent of the library's own spectral code.
#![allow(dead_code)]

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Dominant frequency of `samples` in Hz: Hann-windowed, 8x zero-padded
/// FFT with a parabolic fit around the strongest bin.
pub fn dominant_frequency(samples: &[f64], rate: f64) -> f64 {
    let n = samples.len();
    let padded = (n * 8).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..padded)
        .map(|i| {
            if i < n {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
                Complex64::new(samples[i] * w, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mags: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mags.len() - 1)
        .max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())
        .unwrap();
    let (a, b, c) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let shift = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + shift) * rate / padded as f64
}

pub fn tone(freq: f64, amplitude: f64, rate: u32, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin())
        .collect()
}

/// Pearson correlation of the common prefix of two buffers.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

pub fn rms(s: &[f64]) -> f64 {
    (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt()
}
