use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    Hann,
}

/// Analysis window length, hop and shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_length: usize,
    pub hop: usize,
    pub shape: WindowShape,
}

impl WindowSpec {
    pub fn hann(window_length: usize, hop: usize) -> Result<Self> {
        if window_length == 0 || hop == 0 || hop > window_length {
            return Err(Error::invalid(format!(
                "window {window_length} / hop {hop}: need 0 < hop <= window_length"
            )));
        }
        Ok(Self {
            window_length,
            hop,
            shape: WindowShape::Hann,
        })
    }

    /// Periodic Hann overlap-adds to a constant when the hop divides the
    /// window into at least two pieces.
    pub fn is_cola(&self) -> bool {
        self.window_length.is_multiple_of(self.hop) && self.window_length / self.hop >= 2
    }

    pub fn coefficients(&self) -> Vec<f64> {
        match self.shape {
            WindowShape::Hann => hann_periodic(self.window_length),
        }
    }

    pub fn bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.window_length - self.hop
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex short-time spectrum, one vector of `window_length / 2 + 1` bins
/// per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub window: WindowSpec,
    pub sample_rate: u32,
    /// Length in samples of the signal the frames were taken from.
    pub length: usize,
}

impl Spectrogram {
    pub fn bin_frequency(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.sample_rate) / self.window.window_length as f64
    }
}

/// Frame start positions (relative to the unpadded signal, may be negative)
/// such that every sample is covered by `window_length / hop` frames.
fn frame_count(len: usize, window: &WindowSpec) -> usize {
    let padded = len + window.front_pad();
    if padded <= window.window_length {
        1
    } else {
        (padded - window.window_length).div_ceil(window.hop) + 1
    }
}

pub fn stft(clip: &AudioClip, window: WindowSpec) -> Result<Spectrogram> {
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let n = window.window_length;
    let coeffs = window.coefficients();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let frames_n = frame_count(clip.len(), &window);
    let pad = window.front_pad() as isize;
    let samples = clip.samples();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let frames = (0..frames_n)
        .map(|k| {
            let start = (k * window.hop) as isize - pad;
            for (i, b) in buf.iter_mut().enumerate() {
                let j = start + i as isize;
                let v = if j >= 0 && (j as usize) < samples.len() {
                    samples[j as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(v * coeffs[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..window.bins()].to_vec()
        })
        .collect();
    Ok(Spectrogram {
        frames,
        window,
        sample_rate: clip.sample_rate(),
        length: clip.len(),
    })
}

/// Inverse STFT by overlap-add; requires a COLA window/hop pair.
///
/// The result is clamped into `[-1, 1]`.
pub fn istft(spec: &Spectrogram) -> Result<AudioClip> {
    if !spec.window.is_cola() {
        return Err(Error::ColaViolation {
            window_length: spec.window.window_length,
            hop: spec.window.hop,
        });
    }
    let n = spec.window.window_length;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let frames: Vec<Vec<f64>> = spec
        .frames
        .iter()
        .map(|bins| inverse_real(&ifft, bins, n))
        .collect();
    let window = spec.window.coefficients();
    let samples = overlap_add(
        &frames,
        &window,
        spec.window.hop,
        spec.window.front_pad(),
        spec.length,
        false,
    );
    Ok(AudioClip::clamp_from(samples, spec.sample_rate)?.clip)
}

/// Real inverse FFT of a half spectrum (Hermitian completion).
pub(crate) fn inverse_real(ifft: &Arc<dyn Fft<f64>>, bins: &[Complex64], n: usize) -> Vec<f64> {
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (k, v) in bins.iter().enumerate().take(n / 2 + 1) {
        full[k] = *v;
        if k > 0 && k < n - k {
            full[n - k] = v.conj();
        }
    }
    ifft.process(&mut full);
    full.iter().map(|c| c.re / n as f64).collect()
}

/// Weighted overlap-add: each frame is windowed again and the sum divided
/// by the accumulated squared window, so any hop with full coverage
/// reconstructs exactly. Frame `k` starts at `k * hop - front_pad`.
pub fn overlap_add_normalized(
    frames: &[Vec<f64>],
    window: &[f64],
    hop: usize,
    front_pad: usize,
    length: usize,
) -> Vec<f64> {
    overlap_add(frames, window, hop, front_pad, length, true)
}

fn overlap_add(
    frames: &[Vec<f64>],
    window: &[f64],
    hop: usize,
    front_pad: usize,
    length: usize,
    synthesis_window: bool,
) -> Vec<f64> {
    let n = window.len();
    let total = (frames.len().saturating_sub(1)) * hop + n;
    let mut acc = vec![0.0; total.max(front_pad + length)];
    let mut norm = vec![0.0; acc.len()];
    for (k, frame) in frames.iter().enumerate() {
        let start = k * hop;
        for i in 0..n {
            if synthesis_window {
                acc[start + i] += frame[i] * window[i];
                norm[start + i] += window[i] * window[i];
            } else {
                acc[start + i] += frame[i];
                norm[start + i] += window[i];
            }
        }
    }
    (front_pad..front_pad + length)
        .map(|j| if norm[j] > 1e-10 { acc[j] / norm[j] } else { 0.0 })
        .collect()
}
