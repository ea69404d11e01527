use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported time-compression range for the speed trigger.
pub const BETA_RANGE: (f64, f64) = (0.25, 4.0);

/// Default SNR for additive noise overlays, dB.
pub const DEFAULT_NOISE_SNR_DB: f64 = 10.0;
/// Default SNR for additive emotion overlays, dB.
pub const DEFAULT_EMOTION_SNR_DB: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayKind {
    Noise,
    Emotion,
}

impl OverlayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlayKind::Noise => "noise",
            OverlayKind::Emotion => "emotion",
        }
    }

    pub fn default_snr_db(self) -> f64 {
        match self {
            OverlayKind::Noise => DEFAULT_NOISE_SNR_DB,
            OverlayKind::Emotion => DEFAULT_EMOTION_SNR_DB,
        }
    }
}

impl FromStr for OverlayKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "noise" => Ok(OverlayKind::Noise),
            "emotion" => Ok(OverlayKind::Emotion),
            other => Err(Error::invalid(format!("unknown overlay kind `{other}`"))),
        }
    }
}

/// How loud an additive overlay is mixed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    /// Fixed mixing coefficient in `(0, 1]`.
    Lambda(f64),
    /// Coefficient chosen per clip to hit this signal-to-overlay ratio.
    SnrDb(f64),
}

/// Parametric accent profile: pitch shift, spectral-envelope warp and tempo
/// change applied in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccentProfile {
    pub pitch_semitones: f64,
    pub formant_ratio: f64,
    pub tempo_warp: f64,
}

impl AccentProfile {
    pub const IDENTITY: AccentProfile = AccentProfile {
        pitch_semitones: 0.0,
        formant_ratio: 1.0,
        tempo_warp: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let AccentProfile {
            pitch_semitones,
            formant_ratio,
            tempo_warp,
        } = *self;
        if !(-12.0..=12.0).contains(&pitch_semitones) {
            return Err(Error::invalid(format!(
                "pitch_semitones {pitch_semitones} outside [-12, 12]"
            )));
        }
        if !(0.7..=1.4).contains(&formant_ratio) {
            return Err(Error::invalid(format!(
                "formant_ratio {formant_ratio} outside [0.7, 1.4]"
            )));
        }
        if !(0.5..=2.0).contains(&tempo_warp) {
            return Err(Error::invalid(format!(
                "tempo_warp {tempo_warp} outside [0.5, 2]"
            )));
        }
        Ok(())
    }
}

/// One acoustic trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TriggerSpec {
    Speed {
        beta: f64,
    },
    Volume {
        alpha: f64,
    },
    Additive {
        overlay_id: String,
        strength: Strength,
        kind: OverlayKind,
    },
    Accent(AccentProfile),
}

impl TriggerSpec {
    /// Additive noise overlay at the default noise SNR.
    pub fn noise(overlay_id: impl Into<String>) -> Self {
        TriggerSpec::Additive {
            overlay_id: overlay_id.into(),
            strength: Strength::SnrDb(DEFAULT_NOISE_SNR_DB),
            kind: OverlayKind::Noise,
        }
    }

    /// Additive emotion overlay at the default emotion SNR.
    pub fn emotion(overlay_id: impl Into<String>) -> Self {
        TriggerSpec::Additive {
            overlay_id: overlay_id.into(),
            strength: Strength::SnrDb(DEFAULT_EMOTION_SNR_DB),
            kind: OverlayKind::Emotion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TriggerSpec::Speed { beta } => {
                if !(BETA_RANGE.0..=BETA_RANGE.1).contains(beta) {
                    return Err(Error::invalid(format!(
                        "beta {beta} outside supported range [0.25, 4]"
                    )));
                }
            }
            TriggerSpec::Volume { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(Error::invalid(format!("alpha {alpha} must be positive")));
                }
            }
            TriggerSpec::Additive { strength, .. } => match strength {
                Strength::Lambda(l) if !(*l > 0.0 && *l <= 1.0) => {
                    return Err(Error::invalid(format!("lambda {l} outside (0, 1]")));
                }
                Strength::SnrDb(snr) if !snr.is_finite() => {
                    return Err(Error::invalid("snr must be finite"));
                }
                _ => {}
            },
            TriggerSpec::Accent(profile) => profile.validate()?,
        }
        Ok(())
    }

    pub fn family(&self) -> &'static str {
        match self {
            TriggerSpec::Speed { .. } => "speed",
            TriggerSpec::Volume { .. } => "volume",
            TriggerSpec::Additive { kind, .. } => kind.as_str(),
            TriggerSpec::Accent(_) => "accent",
        }
    }
}

/// Shorthand form, e.g. `speed:1.5`, `volume:2`, `noise:hiss:10db`,
/// `emotion:laugh:l0.3`, `accent:2,1.1,0.9`. A leading `{` is parsed as JSON.
impl FromStr for TriggerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let spec = if s.starts_with('{') {
            serde_json::from_str(s)?
        } else {
            parse_shorthand(s)?
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_number(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid(format!("bad {what} `{s}`")))
}

fn parse_shorthand(s: &str) -> Result<TriggerSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["speed", beta] => Ok(TriggerSpec::Speed {
            beta: parse_number(beta, "beta")?,
        }),
        ["volume", alpha] => Ok(TriggerSpec::Volume {
            alpha: parse_number(alpha, "alpha")?,
        }),
        [kind @ ("noise" | "emotion"), id, rest @ ..] => {
            let kind: OverlayKind = kind.parse()?;
            let strength = match rest {
                [] => Strength::SnrDb(kind.default_snr_db()),
                [v] => {
                    let v = v.trim();
                    if let Some(db) = v.strip_suffix("db") {
                        Strength::SnrDb(parse_number(db, "snr")?)
                    } else if let Some(l) = v.strip_prefix('l') {
                        Strength::Lambda(parse_number(l, "lambda")?)
                    } else {
                        return Err(Error::invalid(format!(
                            "strength `{v}` must look like `10db` or `l0.3`"
                        )));
                    }
                }
                _ => return Err(Error::invalid(format!("bad trigger `{s}`"))),
            };
            Ok(TriggerSpec::Additive {
                overlay_id: id.to_string(),
                strength,
                kind,
            })
        }
        ["accent", values] => {
            let v: Vec<f64> = values
                .split(',')
                .map(|x| parse_number(x, "accent value"))
                .collect::<Result<_>>()?;
            match v.as_slice() {
                [p, f, t] => Ok(TriggerSpec::Accent(AccentProfile {
                    pitch_semitones: *p,
                    formant_ratio: *f,
                    tempo_warp: *t,
                })),
                _ => Err(Error::invalid(
                    "accent needs pitch_semitones,formant_ratio,tempo_warp",
                )),
            }
        }
        _ => Err(Error::invalid(format!("unrecognised trigger `{s}`"))),
    }
}

impl fmt::Display for TriggerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerSpec::Speed { beta } => write!(f, "speed:{beta}"),
            TriggerSpec::Volume { alpha } => write!(f, "volume:{alpha}"),
            TriggerSpec::Additive {
                overlay_id,
                strength,
                kind,
            } => match strength {
                Strength::SnrDb(db) => write!(f, "{}:{overlay_id}:{db}db", kind.as_str()),
                Strength::Lambda(l) => write!(f, "{}:{overlay_id}:l{l}", kind.as_str()),
            },
            TriggerSpec::Accent(p) => write!(
                f,
                "accent:{},{},{}",
                p.pitch_semitones, p.formant_ratio, p.tempo_warp
            ),
        }
    }
}
