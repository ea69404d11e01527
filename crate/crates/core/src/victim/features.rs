use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{hann_periodic, AudioClip, CANONICAL_RATE};
use crate::error::{Error, Result};

pub const N_MFCC: usize = 13;
pub const N_MELS: usize = 26;
pub const FEATURE_DIM: usize = 2 * N_MFCC;
/// 25 ms at 16 kHz.
pub const FRAME_LENGTH: usize = 400;
/// 10 ms at 16 kHz.
pub const FRAME_HOP: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_LOW_HZ: f64 = 300.0;
pub const MEL_HIGH_HZ: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MIN_FRAMES: usize = 3;

/// Per-clip MFCC means followed by standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
}

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// MFCC front end with precomputed window, filterbank and DCT.
pub struct FeatureExtractor {
    cmn: bool,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// `(first_bin, weights)` per mel filter.
    filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<[f64; N_MELS]>,
}

impl FeatureExtractor {
    pub fn new(cmn: bool) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        let bins = FFT_SIZE / 2 + 1;
        let bin_hz = CANONICAL_RATE as f64 / FFT_SIZE as f64;
        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let filters = (0..N_MELS)
            .map(|m| {
                let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > left && f <= centre {
                            (f - left) / (centre - left)
                        } else if f > centre && f < right {
                            (right - f) / (right - centre)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |w| w.0);
                (first, weights.into_iter().map(|w| w.1).collect())
            })
            .collect();
        let dct = (0..N_MFCC)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / N_MELS as f64).sqrt()
                } else {
                    (2.0 / N_MELS as f64).sqrt()
                };
                let mut row = [0.0; N_MELS];
                for (m, r) in row.iter_mut().enumerate() {
                    *r = scale
                        * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / N_MELS as f64)
                            .cos();
                }
                row
            })
            .collect();
        Self {
            cmn,
            fft,
            window: hann_periodic(FRAME_LENGTH),
            filters,
            dct,
        }
    }

    pub fn cmn(&self) -> bool {
        self.cmn
    }

    /// Raw MFCC frames (no normalisation).
    pub fn mfcc_frames(&self, clip: &AudioClip) -> Result<Vec<[f64; N_MFCC]>> {
        if clip.sample_rate() != CANONICAL_RATE {
            return Err(Error::RateMismatch {
                expected: CANONICAL_RATE,
                got: clip.sample_rate(),
            });
        }
        let x = clip.samples();
        let needed = FRAME_LENGTH + (MIN_FRAMES - 1) * FRAME_HOP;
        if x.len() < needed {
            return Err(Error::ClipTooShort {
                needed,
                got: x.len(),
            });
        }
        let n_frames = 1 + (x.len() - FRAME_LENGTH) / FRAME_HOP;
        let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; FFT_SIZE / 2 + 1];
        let mut frames = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * FRAME_HOP;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < FRAME_LENGTH {
                    Complex64::new(x[start + i] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            let mut log_mel = [0.0; N_MELS];
            for (lm, (first, weights)) in log_mel.iter_mut().zip(&self.filters) {
                let e: f64 = weights
                    .iter()
                    .zip(&power[*first..])
                    .map(|(w, p)| w * p)
                    .sum();
                *lm = e.max(LOG_FLOOR).ln();
            }
            let mut c = [0.0; N_MFCC];
            for (ck, row) in c.iter_mut().zip(&self.dct) {
                *ck = row.iter().zip(&log_mel).map(|(a, b)| a * b).sum();
            }
            frames.push(c);
        }
        Ok(frames)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureVector> {
        let mut frames = self.mfcc_frames(clip)?;
        let n = frames.len() as f64;
        let mut mean = [0.0; N_MFCC];
        for fr in &frames {
            for (m, c) in mean.iter_mut().zip(fr) {
                *m += c / n;
            }
        }
        if self.cmn {
            for fr in &mut frames {
                for (c, m) in fr.iter_mut().zip(&mean) {
                    *c -= m;
                }
            }
        }
        let mut values = [0.0; FEATURE_DIM];
        for k in 0..N_MFCC {
            let mu = frames.iter().map(|fr| fr[k]).sum::<f64>() / n;
            let var = frames.iter().map(|fr| (fr[k] - mu).powi(2)).sum::<f64>() / n;
            values[k] = mu;
            values[N_MFCC + k] = var.sqrt();
        }
        Ok(FeatureVector { values })
    }
}

/// Features with cepstral mean normalisation enabled.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureVector> {
    FeatureExtractor::new(true).extract(clip)
}
