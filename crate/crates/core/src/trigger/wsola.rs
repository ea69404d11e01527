//! Waveform-similarity overlap-add (WSOLA) time-scale modification.
//!
//! Output frames are laid down at a fixed synthesis hop. The analysis frame
//! for output frame `k` is taken near `k * beta * hop` in the input, shifted
//! within `±tolerance` samples to the position whose normalised
//! cross-correlation with the natural continuation of the previous frame is
//! highest. This keeps waveform periods aligned, so pitch is preserved.

use crate::audio::hann_periodic;
use crate::error::{Error, Result};

/// Frame geometry in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WsolaConfig {
    pub window: usize,
    pub synthesis_hop: usize,
    pub tolerance: usize,
}

impl WsolaConfig {
    /// 32 ms window, 8 ms hop, ±4 ms similarity search.
    pub fn for_rate(sample_rate: u32) -> Self {
        let ms = |m: u32| (sample_rate * m / 1000) as usize;
        Self {
            window: ms(32),
            synthesis_hop: ms(8),
            tolerance: ms(4),
        }
    }
}

/// Time-scales `input` by `beta` (`> 1` is faster/shorter). Output length is
/// `round(len / beta)`.
pub fn time_scale(input: &[f64], beta: f64, config: WsolaConfig) -> Result<Vec<f64>> {
    let WsolaConfig {
        window: n,
        synthesis_hop: hs,
        tolerance: tol,
    } = config;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("beta {beta} must be positive")));
    }
    if input.len() < n {
        return Err(Error::ClipTooShort {
            needed: n,
            got: input.len(),
        });
    }
    let out_len = (input.len() as f64 / beta).round() as usize;
    let ha = beta * hs as f64;
    let frames = out_len / hs + 2;

    // padded input: frame k nominally starts at k*ha + tol
    let pad = n / 2 + tol;
    let last_start = ((frames - 1) as f64 * ha).round() as usize + 2 * tol + hs;
    let padded_len = (last_start + n).max(pad + input.len());
    let mut x = vec![0.0; padded_len];
    x[pad..pad + input.len()].copy_from_slice(input);

    let mut energy = vec![0.0; padded_len + 1];
    for (i, v) in x.iter().enumerate() {
        energy[i + 1] = energy[i] + v * v;
    }
    let seg_energy = |start: usize| energy[start + n] - energy[start];

    let win = hann_periodic(n);
    let mut y = vec![0.0; (frames - 1) * hs + n];
    let mut wsum = vec![0.0; y.len()];
    let mut prev: Option<usize> = None;

    for k in 0..frames {
        let nominal = (k as f64 * ha).round() as usize + tol;
        let start = match prev {
            None => nominal,
            Some(p) => {
                let natural = p + hs;
                let natural_seg = &x[natural..natural + n];
                let natural_e = seg_energy(natural);
                let mut best = nominal;
                let mut best_score = f64::NEG_INFINITY;
                // search outward from zero shift so ties keep the smallest shift
                for offset in 0..=tol {
                    for cand in candidate_pair(nominal, offset) {
                        let denom = (seg_energy(cand) * natural_e).sqrt();
                        let score = if denom > 1e-20 {
                            dot(&x[cand..cand + n], natural_seg) / denom
                        } else {
                            0.0
                        };
                        if score > best_score + 1e-12 {
                            best_score = score;
                            best = cand;
                        }
                    }
                }
                best
            }
        };
        let out = k * hs;
        for i in 0..n {
            y[out + i] += win[i] * x[start + i];
            wsum[out + i] += win[i];
        }
        prev = Some(start);
    }

    // y index n/2 corresponds to output sample 0
    Ok((0..out_len)
        .map(|t| {
            let j = t + n / 2;
            if wsum[j] > 1e-9 {
                y[j] / wsum[j]
            } else {
                0.0
            }
        })
        .collect())
}

fn candidate_pair(nominal: usize, offset: usize) -> impl Iterator<Item = usize> {
    let minus = if offset == 0 {
        None
    } else {
        Some(nominal - offset)
    };
    std::iter::once(nominal + offset).chain(minus)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
