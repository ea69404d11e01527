//! Windowed-sinc polyphase resampling.
//!
//! The interpolation kernel is a Kaiser-windowed sinc with 64 taps per phase,
//! tabulated at `PHASES` fractional offsets and linearly interpolated between
//! neighbouring phases. Each phase row is normalised to unit DC gain.

use super::AudioClip;
use crate::error::{Error, Result};

const TAPS: usize = 64;
const HALF: isize = (TAPS / 2) as isize;
const PHASES: usize = 1024;
const KAISER_BETA: f64 = 8.0;
const ROLLOFF: f64 = 0.95;

/// Resamples `clip` to `target_rate`.
///
/// Output length is `round(len * target / source)`. Equal rates return the
/// clip unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let source = f64::from(clip.sample_rate());
    let target = f64::from(target_rate);
    let out_len = (clip.len() as f64 * target / source).round() as usize;
    let out = resample_samples(clip.samples(), source / target, out_len);
    Ok(AudioClip::clamp_from(out, target_rate)?.clip)
}

/// Band-limited interpolation of `input` at positions `i * step` for
/// `i in 0..out_len`. `step > 1` shortens (and low-passes) the signal.
pub fn resample_samples(input: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    assert!(step > 0.0 && step.is_finite(), "step must be positive");
    let cutoff = 0.5 * (1.0 / step).min(1.0) * ROLLOFF;
    let table = KernelTable::new(cutoff);
    let n = input.len() as isize;
    (0..out_len)
        .map(|i| {
            let t = i as f64 * step;
            let base = t.floor();
            let frac = t - base;
            let base = base as isize;
            let first = base - (HALF - 1);
            let taps = table.row(frac);
            let mut acc = 0.0;
            for (k, w) in taps.iter().enumerate() {
                let j = first + k as isize;
                if (0..n).contains(&j) {
                    acc += input[j as usize] * w;
                }
            }
            acc
        })
        .collect()
}

struct KernelTable {
    rows: Vec<[f64; TAPS]>,
}

impl KernelTable {
    fn new(cutoff: f64) -> Self {
        let i0_beta = bessel_i0(KAISER_BETA);
        let rows = (0..=PHASES)
            .map(|p| {
                let frac = p as f64 / PHASES as f64;
                let mut row = [0.0; TAPS];
                for (k, w) in row.iter_mut().enumerate() {
                    // distance from the output position to input tap k
                    let x = frac + (HALF - 1) as f64 - k as f64;
                    let r = x / HALF as f64;
                    let window = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    };
                    *w = 2.0 * cutoff * sinc(2.0 * cutoff * x) * window;
                }
                let sum: f64 = row.iter().sum();
                for w in row.iter_mut() {
                    *w /= sum;
                }
                row
            })
            .collect();
        Self { rows }
    }

    fn row(&self, frac: f64) -> [f64; TAPS] {
        let pos = frac * PHASES as f64;
        let lo = (pos.floor() as usize).min(PHASES - 1);
        let mix = pos - lo as f64;
        if mix == 0.0 {
            return self.rows[lo];
        }
        let (a, b) = (&self.rows[lo], &self.rows[lo + 1]);
        let mut out = [0.0; TAPS];
        for k in 0..TAPS {
            out[k] = a[k] + mix * (b[k] - a[k]);
        }
        out
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
