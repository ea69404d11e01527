//! Canonical audio representation and the signal plumbing every other module
//! builds on: WAV I/O, band-limited resampling, STFT/ISTFT and level
//! statistics.
//!
//! All processing happens on mono `f64` samples in `[-1, 1]`. Anything read
//! from disk is canonicalised to [`CANONICAL_RATE`] on ingestion.

mod resample;
mod stft;
mod wav;

pub use resample::{resample, resample_samples};
pub use stft::{
    hann_periodic, istft, overlap_add_normalized, stft, Spectrogram, WindowShape, WindowSpec,
};
pub use wav::{load_wav, load_wav_native, save_wav};
pub(crate) use stft::inverse_real;

use crate::error::{Error, Result};

/// Internal sample rate after ingestion.
pub const CANONICAL_RATE: u32 = 16_000;

/// Mono floating-point audio buffer.
///
/// Every sample lies in `[-1, 1]` and is finite; the constructors enforce it.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

/// A clip produced by an operation that may have clipped, with the number of
/// samples that were clamped into range.
#[derive(Debug, Clone, PartialEq)]
pub struct Clamped {
    pub clip: AudioClip,
    pub clamped: usize,
}

impl AudioClip {
    /// Validating constructor; rejects out-of-range or non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        check_rate(sample_rate)?;
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::invalid(format!(
                "sample {i} = {s} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Hard-clamps `samples` into `[-1, 1]` and counts clamping events.
    /// Non-finite samples are rejected.
    pub fn clamp_from(mut samples: Vec<f64>, sample_rate: u32) -> Result<Clamped> {
        check_rate(sample_rate)?;
        let mut clamped = 0;
        for (i, s) in samples.iter_mut().enumerate() {
            if !s.is_finite() {
                return Err(Error::invalid(format!("sample {i} is not finite")));
            }
            if *s > 1.0 {
                *s = 1.0;
                clamped += 1;
            } else if *s < -1.0 {
                *s = -1.0;
                clamped += 1;
            }
        }
        Ok(Clamped {
            clip: Self {
                samples,
                sample_rate,
            },
            clamped,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Peak absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}

fn check_rate(sample_rate: u32) -> Result<()> {
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    Ok(())
}

/// Root-mean-square level of a clip.
pub fn rms(clip: &AudioClip) -> Result<f64> {
    rms_samples(clip.samples())
}

/// Root-mean-square of a raw buffer (no amplitude invariant required).
pub fn rms_samples(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let sum: f64 = samples.iter().map(|s| s * s).sum();
    Ok((sum / samples.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rms_basic_values() {
        assert_eq!(rms(&AudioClip::silence(100, 16_000)).unwrap(), 0.0);
        let c = AudioClip::new(vec![0.5; 64], 16_000).unwrap();
        assert!((rms(&c).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            rms(&AudioClip::silence(0, 16_000)),
            Err(Error::EmptyAudio)
        ));
    }

    #[test]
    fn rms_of_sine_is_amplitude_over_root_two() {
        // 200 full periods of a 100 Hz sine at 16 kHz.
        let a = 0.7;
        let samples: Vec<f64> = (0..32_000)
            .map(|i| a * (2.0 * std::f64::consts::PI * 100.0 * i as f64 / 16_000.0).sin())
            .collect();
        let value = rms_samples(&samples).unwrap();
        assert!((value - a / 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn constructor_rejects_out_of_range() {
        assert!(AudioClip::new(vec![1.5], 16_000).is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16_000).is_err());
        assert!(AudioClip::new(vec![0.1], 0).is_err());
        let c = AudioClip::clamp_from(vec![1.5, -2.0, 0.3], 16_000).unwrap();
        assert_eq!(c.clamped, 2);
        assert_eq!(c.clip.samples(), &[1.0, -1.0, 0.3]);
    }

    proptest! {
        #[test]
        fn rms_is_absolutely_homogeneous(
            samples in prop::collection::vec(-1.0f64..1.0, 1..200),
            alpha in -4.0f64..4.0,
        ) {
            let scaled: Vec<f64> = samples.iter().map(|s| alpha * s).collect();
            let lhs = rms_samples(&scaled).unwrap();
            let rhs = alpha.abs() * rms_samples(&samples).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
