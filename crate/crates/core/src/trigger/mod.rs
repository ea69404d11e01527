//! Acoustic trigger transforms.
//!
//! Each transform maps a clean clip to a triggered clip:
//!
//! * volume: `alpha * x`
//! * speed: pitch-preserving time-scale modification by `beta` (WSOLA)
//! * additive: `x + lambda * overlay`, with `lambda` fixed or chosen for a
//!   target SNR
//! * accent: pitch shift, spectral-envelope warp and tempo change
//!
//! Every output is hard-clamped into `[-1, 1]`; the number of clamped samples
//! is returned alongside the clip.

mod bank;
mod spec;
mod wsola;

pub use bank::{OverlayBank, OverlayEntry, INDEX_FILE};
pub use spec::{
    AccentProfile, OverlayKind, Strength, TriggerSpec, BETA_RANGE, DEFAULT_EMOTION_SNR_DB,
    DEFAULT_NOISE_SNR_DB,
};
pub use wsola::{time_scale, WsolaConfig};

use rustfft::num_complex::Complex64;

use crate::audio::{istft, resample_samples, rms_samples, stft, AudioClip, Clamped, WindowSpec};
use crate::error::{Error, Result};

/// Crossfade length used when looping a short overlay.
pub const LOOP_CROSSFADE_MS: u32 = 10;

const SILENCE_RMS: f64 = 1e-6;

pub fn apply_volume(clip: &AudioClip, alpha: f64) -> Result<Clamped> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!("alpha {alpha} must be positive")));
    }
    if alpha == 1.0 {
        return Ok(Clamped {
            clip: clip.clone(),
            clamped: 0,
        });
    }
    let scaled = clip.samples().iter().map(|s| alpha * s).collect();
    AudioClip::clamp_from(scaled, clip.sample_rate())
}

/// Pitch-preserving speed change; `beta > 1` shortens the clip.
pub fn apply_speed(clip: &AudioClip, beta: f64) -> Result<Clamped> {
    if !(BETA_RANGE.0..=BETA_RANGE.1).contains(&beta) {
        return Err(Error::invalid(format!(
            "beta {beta} outside supported range [0.25, 4]"
        )));
    }
    let out = time_scale(clip.samples(), beta, WsolaConfig::for_rate(clip.sample_rate()))?;
    AudioClip::clamp_from(out, clip.sample_rate())
}

/// Loops or truncates `overlay` to exactly `len` samples. Repetitions are
/// joined with a linear crossfade of [`LOOP_CROSSFADE_MS`].
pub fn fit_overlay(overlay: &AudioClip, len: usize) -> Result<Vec<f64>> {
    let src = overlay.samples();
    if src.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if src.len() >= len {
        return Ok(src[..len].to_vec());
    }
    let fade = (overlay.sample_rate() * LOOP_CROSSFADE_MS / 1000) as usize;
    let fade = if src.len() > 2 * fade { fade } else { 0 };
    let mut out = Vec::with_capacity(len + src.len());
    out.extend_from_slice(src);
    while out.len() < len {
        let tail = out.len() - fade;
        for i in 0..fade {
            let g = (i as f64 + 0.5) / fade as f64;
            out[tail + i] = out[tail + i] * (1.0 - g) + src[i] * g;
        }
        out.extend_from_slice(&src[fade..]);
    }
    out.truncate(len);
    Ok(out)
}

/// `clip + lambda * overlay`, with the overlay fitted to the clip length.
pub fn apply_additive(clip: &AudioClip, overlay: &AudioClip, lambda: f64) -> Result<Clamped> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("lambda {lambda} outside (0, 1]")));
    }
    check_same_rate(clip, overlay)?;
    let fitted = fit_overlay(overlay, clip.len())?;
    let mixed = clip
        .samples()
        .iter()
        .zip(&fitted)
        .map(|(x, n)| x + lambda * n)
        .collect();
    AudioClip::clamp_from(mixed, clip.sample_rate())
}

/// Mixing coefficient that puts the fitted overlay `snr_db` below the clip,
/// clamped into `(0, 1]`.
pub fn mix_to_snr(clip: &AudioClip, overlay: &AudioClip, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr must be finite"));
    }
    check_same_rate(clip, overlay)?;
    let clip_rms = rms_samples(clip.samples())?;
    if clip_rms < SILENCE_RMS {
        return Err(Error::Silent("clip"));
    }
    let overlay_rms = rms_samples(&fit_overlay(overlay, clip.len())?)?;
    if overlay_rms < SILENCE_RMS {
        return Err(Error::Silent("overlay"));
    }
    let lambda = clip_rms / overlay_rms * 10f64.powf(-snr_db / 20.0);
    Ok(lambda.clamp(f64::MIN_POSITIVE, 1.0))
}

fn check_same_rate(clip: &AudioClip, overlay: &AudioClip) -> Result<()> {
    if clip.sample_rate() != overlay.sample_rate() {
        return Err(Error::RateMismatch {
            expected: clip.sample_rate(),
            got: overlay.sample_rate(),
        });
    }
    Ok(())
}

/// Parametric accent: pitch shift (time-stretch then resample), spectral
/// envelope warp along frequency, then tempo change.
pub fn apply_accent(clip: &AudioClip, profile: &AccentProfile) -> Result<Clamped> {
    profile.validate()?;
    let rate = clip.sample_rate();
    let cfg = WsolaConfig::for_rate(rate);
    let mut samples = clip.samples().to_vec();

    if profile.pitch_semitones != 0.0 {
        let ratio = 2f64.powf(profile.pitch_semitones / 12.0);
        let stretched = time_scale(&samples, 1.0 / ratio, cfg)?;
        samples = resample_samples(&stretched, ratio, samples.len());
    }
    if profile.formant_ratio != 1.0 {
        samples = warp_envelope(&samples, rate, profile.formant_ratio)?;
    }
    if profile.tempo_warp != 1.0 {
        samples = time_scale(&samples, profile.tempo_warp, cfg)?;
    }
    AudioClip::clamp_from(samples, rate)
}

/// Half-width, in bins, of the log-magnitude smoothing that defines the
/// spectral envelope.
const ENVELOPE_HALF_WIDTH: usize = 8;
const MAX_ENVELOPE_GAIN: f64 = 1e3;

fn warp_envelope(samples: &[f64], rate: u32, ratio: f64) -> Result<Vec<f64>> {
    let clip = AudioClip::clamp_from(samples.to_vec(), rate)?.clip;
    let window_length = (rate / 1000 * 32) as usize;
    let window = WindowSpec::hann(window_length, window_length / 4)?;
    let mut spec = stft(&clip, window)?;
    for frame in spec.frames.iter_mut() {
        let log_mag: Vec<f64> = frame.iter().map(|c| (c.norm() + 1e-12).ln()).collect();
        let env = smooth(&log_mag, ENVELOPE_HALF_WIDTH);
        for (k, bin) in frame.iter_mut().enumerate() {
            let source = k as f64 / ratio;
            let warped = interpolate(&env, source);
            let gain = (warped - env[k]).exp().clamp(1.0 / MAX_ENVELOPE_GAIN, MAX_ENVELOPE_GAIN);
            *bin = Complex64::new(bin.re * gain, bin.im * gain);
        }
    }
    // istft clamps; the final clamp in apply_accent does the counting
    Ok(istft(&spec)?.into_samples())
}

fn smooth(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn interpolate(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}

/// Applies `spec` to `clip`. Pure: identical inputs give bit-identical
/// outputs.
pub fn apply_trigger(clip: &AudioClip, spec: &TriggerSpec, bank: &OverlayBank) -> Result<Clamped> {
    spec.validate()?;
    match spec {
        TriggerSpec::Speed { beta } => apply_speed(clip, *beta),
        TriggerSpec::Volume { alpha } => apply_volume(clip, *alpha),
        TriggerSpec::Additive {
            overlay_id,
            strength,
            ..
        } => {
            let overlay = &bank.get(overlay_id)?.clip;
            let lambda = match strength {
                Strength::Lambda(l) => *l,
                Strength::SnrDb(db) => mix_to_snr(clip, overlay, *db)?,
            };
            apply_additive(clip, overlay, lambda)
        }
        TriggerSpec::Accent(profile) => apply_accent(clip, profile),
    }
}
