//! Test-time defenses: a band-limited energy gate standing in for a speech
//! VAD, and linear parameter mixing toward a clean model.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{inverse_real, overlap_add_normalized, stft, AudioClip, WindowSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, EvalSet};
use crate::victim::VictimModel;

/// Clip-to-clip transform applied before the model sees the audio.
pub trait Preprocessor: Sync {
    fn name(&self) -> &str;
    fn process(&self, clip: &AudioClip) -> Result<AudioClip>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Gate threshold relative to the loudest frame's in-band energy.
    pub gate_threshold_db: f64,
    /// Gain applied to gated frames.
    pub attenuation_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            band_low: 300.0,
            band_high: 3400.0,
            frame_ms: 25.0,
            hop_ms: 10.0,
            gate_threshold_db: -30.0,
            attenuation_db: -60.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = f64::from(sample_rate) / 2.0;
        if !(0.0 <= self.band_low && self.band_low < self.band_high && self.band_high < nyquist) {
            return Err(Error::invalid(format!(
                "need 0 <= band_low < band_high < {nyquist} Hz, got {}..{}",
                self.band_low, self.band_high
            )));
        }
        if !(self.gate_threshold_db < 0.0 && self.attenuation_db < 0.0) {
            return Err(Error::invalid("gate and attenuation levels must be negative dB"));
        }
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.frame_ms) {
            return Err(Error::invalid("need 0 < hop_ms <= frame_ms"));
        }
        Ok(())
    }

    fn geometry(&self, sample_rate: u32) -> Result<WindowSpec> {
        let samples = |ms: f64| (ms * f64::from(sample_rate) / 1000.0).round() as usize;
        WindowSpec::hann(samples(self.frame_ms), samples(self.hop_ms))
    }
}

impl Preprocessor for VadConfig {
    fn name(&self) -> &str {
        "vad"
    }

    fn process(&self, clip: &AudioClip) -> Result<AudioClip> {
        energy_vad_filter(clip, self)
    }
}

/// Band-limits each STFT frame to `[band_low, band_high]`, attenuates frames
/// whose in-band energy is more than `gate_threshold_db` below the loudest
/// frame, and resynthesises by weighted overlap-add. Output length equals
/// input length.
pub fn energy_vad_filter(clip: &AudioClip, config: &VadConfig) -> Result<AudioClip> {
    config.validate(clip.sample_rate())?;
    let window = config.geometry(clip.sample_rate())?;
    let n = window.window_length;
    if clip.len() < n {
        return Err(Error::ClipTooShort {
            needed: n,
            got: clip.len(),
        });
    }
    let mut spec = stft(clip, window)?;
    let energies: Vec<f64> = spec
        .frames
        .iter_mut()
        .map(|frame| {
            let mut e = 0.0;
            for (k, bin) in frame.iter_mut().enumerate() {
                let f = k as f64 * f64::from(clip.sample_rate()) / n as f64;
                if f < config.band_low || f > config.band_high {
                    *bin = Default::default();
                } else {
                    e += bin.norm_sqr();
                }
            }
            e
        })
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    let threshold = peak * 10f64.powf(config.gate_threshold_db / 10.0);
    let gain = 10f64.powf(config.attenuation_db / 20.0);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let frames: Vec<Vec<f64>> = spec
        .frames
        .iter()
        .zip(&energies)
        .map(|(bins, &e)| {
            let mut x = inverse_real(&ifft, bins, n);
            if e < threshold {
                x.iter_mut().for_each(|v| *v *= gain);
            }
            x
        })
        .collect();
    let samples = overlap_add_normalized(
        &frames,
        &window.coefficients(),
        window.hop,
        n - window.hop,
        clip.len(),
    );
    Ok(AudioClip::clamp_from(samples, clip.sample_rate())?.clip)
}

/// `tau * clean + (1 - tau) * backdoored` for every parameter. The endpoints
/// return exact copies.
pub fn fine_mix(clean: &VictimModel, backdoored: &VictimModel, tau: f64) -> Result<VictimModel> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    if !clean.same_topology(backdoored) {
        return Err(Error::TopologyMismatch(format!(
            "{}->{}->{} vs {}->{}->{}",
            clean.input_dim,
            clean.hidden,
            clean.classes,
            backdoored.input_dim,
            backdoored.hidden,
            backdoored.classes
        )));
    }
    if tau == 1.0 {
        return Ok(clean.clone());
    }
    if tau == 0.0 {
        return Ok(backdoored.clone());
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(c, d)| tau * c + (1.0 - tau) * d).collect()
    };
    let mut out = backdoored.clone();
    out.set_params(&mix(&clean.params(), &backdoored.params()))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Defense {
    Vad(VadConfig),
    FineMix { tau: f64 },
}

/// Reports for the same test set before and after a defense.
#[derive(Debug, Clone, PartialEq)]
pub struct DefenseOutcome {
    pub defense: Defense,
    pub pre: EvalReport,
    pub post: EvalReport,
}

impl DefenseOutcome {
    /// `stage,metric,value,n` rows preceded by a `# config_digest:` line.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# config_digest: {}\nstage,metric,value,n\n",
            self.pre.config_digest
        );
        for (stage, r) in [("pre", &self.pre), ("post", &self.post)] {
            let _ = writeln!(out, "{stage},acc,{},{}", r.acc, r.n_clean);
            if let Some(asr) = r.asr {
                let _ = writeln!(out, "{stage},asr,{asr},{}", r.n_triggered);
            }
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates the backdoored model, applies `defense` and evaluates again on
/// the same clips. VAD filters test audio only.
pub fn evaluate_defense(
    defense: &Defense,
    backdoored: &VictimModel,
    clean: Option<&VictimModel>,
    set: &EvalSet,
    target_label: usize,
    config_digest: &str,
) -> Result<DefenseOutcome> {
    let pre = evaluate(backdoored, set, target_label, config_digest)?;
    let post = match defense {
        Defense::Vad(cfg) => evaluate_preprocessed(cfg, backdoored, set, target_label, config_digest)?,
        Defense::FineMix { tau } => {
            let clean = clean.ok_or(Error::MissingCleanModel)?;
            let mixed = fine_mix(clean, backdoored, *tau)?;
            evaluate(&mixed, set, target_label, config_digest)?
        }
    };
    Ok(DefenseOutcome {
        defense: *defense,
        pre,
        post,
    })
}

pub fn evaluate_preprocessed(
    pre: &dyn Preprocessor,
    model: &VictimModel,
    set: &EvalSet,
    target_label: usize,
    config_digest: &str,
) -> Result<EvalReport> {
    let filtered = set.map(|c| pre.process(c))?;
    evaluate(model, &filtered, target_label, config_digest)
}
