//! Clean accuracy, attack success rate, poisoning-ratio sweeps and the CSV /
//! SVG artefacts built from them.

mod plot;
mod sweep;

pub use plot::{emit_plot, Series};
pub use sweep::{ratio_sweep, SweepPlan, SweepPoint, SweepResult};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::poison::{Manifest, Split};
use crate::trigger::{apply_trigger, OverlayBank, TriggerSpec};
use crate::victim::{FeatureExtractor, VictimModel};

/// Test clips held in memory, with their triggered counterparts.
///
/// Triggered versions exist only for records whose label differs from the
/// attack target; a target-labelled clip predicted as target says nothing
/// about the backdoor.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub label: usize,
    pub risk_type: Option<String>,
    pub clean: AudioClip,
    pub triggered: Option<AudioClip>,
}

impl EvalSet {
    /// Loads the test split and applies `trigger` on the fly.
    pub fn build(
        manifest: &Manifest,
        trigger: Option<&TriggerSpec>,
        bank: &OverlayBank,
        target_label: usize,
    ) -> Result<Self> {
        let records: Vec<_> = manifest.split(Split::Test).collect();
        if records.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let items = records
            .par_iter()
            .map(|r| {
                let clean = manifest.load_audio(r)?;
                let triggered = match trigger {
                    Some(spec) if r.sample.label != target_label => {
                        Some(apply_trigger(&clean, spec, bank)?.clip)
                    }
                    _ => None,
                };
                Ok(EvalItem {
                    id: r.sample.id.clone(),
                    label: r.sample.label,
                    risk_type: r.sample.risk_type.clone(),
                    clean,
                    triggered,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { items })
    }

    /// Applies `f` to every clean and triggered clip.
    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&AudioClip) -> Result<AudioClip> + Sync,
    {
        let items = self
            .items
            .par_iter()
            .map(|it| {
                Ok(EvalItem {
                    clean: f(&it.clean)?,
                    triggered: it.triggered.as_ref().map(&f).transpose()?,
                    ..it.clone()
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { items })
    }
}

/// Predictions for one test record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub label: usize,
    pub risk_type: Option<String>,
    pub clean_prediction: usize,
    pub triggered_prediction: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskStats {
    pub acc: f64,
    pub n_clean: usize,
    pub asr: Option<f64>,
    pub n_triggered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub n_clean: usize,
    /// `None` when no trigger was evaluated or no record was eligible.
    pub asr: Option<f64>,
    pub n_triggered: usize,
    pub per_risk: Option<BTreeMap<String, RiskStats>>,
    pub config_digest: String,
    pub outcomes: Vec<SampleOutcome>,
}

fn rates(outcomes: &[&SampleOutcome], target_label: usize) -> RiskStats {
    let n_clean = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.clean_prediction == o.label).count();
    let triggered: Vec<usize> = outcomes.iter().filter_map(|o| o.triggered_prediction).collect();
    let hits = triggered.iter().filter(|&&p| p == target_label).count();
    RiskStats {
        acc: correct as f64 / n_clean as f64,
        n_clean,
        asr: (!triggered.is_empty()).then(|| hits as f64 / triggered.len() as f64),
        n_triggered: triggered.len(),
    }
}

impl EvalReport {
    /// Aggregates per-sample outcomes; `per_risk` is filled when every
    /// outcome carries a risk type.
    pub fn from_outcomes(
        outcomes: Vec<SampleOutcome>,
        target_label: usize,
        config_digest: impl Into<String>,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let all: Vec<&SampleOutcome> = outcomes.iter().collect();
        let overall = rates(&all, target_label);
        let per_risk = if outcomes.iter().all(|o| o.risk_type.is_some()) {
            let mut groups: BTreeMap<String, Vec<&SampleOutcome>> = BTreeMap::new();
            for o in &outcomes {
                groups.entry(o.risk_type.clone().unwrap_or_default()).or_default().push(o);
            }
            Some(
                groups
                    .into_iter()
                    .map(|(k, v)| (k, rates(&v, target_label)))
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            acc: overall.acc,
            n_clean: overall.n_clean,
            asr: overall.asr,
            n_triggered: overall.n_triggered,
            per_risk,
            config_digest: config_digest.into(),
            outcomes,
        })
    }

    /// Writes `metric,value,n` rows preceded by a `# config_digest:` line.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_digest: {}\nmetric,value,n\n", self.config_digest);
        let mut row = |metric: &str, value: f64, n: usize| {
            let _ = writeln!(out, "{metric},{value},{n}");
        };
        row("acc", self.acc, self.n_clean);
        if let Some(asr) = self.asr {
            row("asr", asr, self.n_triggered);
        }
        if let Some(per_risk) = &self.per_risk {
            for (risk, s) in per_risk {
                row(&format!("acc/{risk}"), s.acc, s.n_clean);
                if let Some(asr) = s.asr {
                    row(&format!("asr/{risk}"), asr, s.n_triggered);
                }
            }
        }
        out
    }
}

/// Metric rows read back from a report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRows {
    pub config_digest: Option<String>,
    pub rows: Vec<(String, f64, usize)>,
}

impl ReportRows {
    pub fn get(&self, metric: &str) -> Option<(f64, usize)> {
        self.rows
            .iter()
            .find(|(m, _, _)| m == metric)
            .map(|(_, v, n)| (*v, *n))
    }
}

pub fn parse_report_csv(text: &str) -> Result<ReportRows> {
    let config_digest = text
        .lines()
        .find_map(|l| l.strip_prefix("# config_digest: "))
        .map(str::to_string);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(String, f64, usize)>() {
        rows.push(rec?);
    }
    Ok(ReportRows {
        config_digest,
        rows,
    })
}

/// Writes a report CSV to `path`.
pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Evaluates `model` on a prepared set.
pub fn evaluate(
    model: &VictimModel,
    set: &EvalSet,
    target_label: usize,
    config_digest: &str,
) -> Result<EvalReport> {
    if target_label >= model.classes {
        return Err(Error::LabelOutOfRange {
            label: target_label,
            classes: model.classes,
        });
    }
    let fx = FeatureExtractor::new(model.cmn);
    let outcomes = set
        .items
        .par_iter()
        .map(|it| {
            Ok(SampleOutcome {
                id: it.id.clone(),
                label: it.label,
                risk_type: it.risk_type.clone(),
                clean_prediction: model.predict_with(&fx, &it.clean)?.label,
                triggered_prediction: it
                    .triggered
                    .as_ref()
                    .map(|c| model.predict_with(&fx, c).map(|p| p.label))
                    .transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_outcomes(outcomes, target_label, config_digest)
}

/// Clean accuracy on the test split.
pub fn compute_acc(model: &VictimModel, manifest: &Manifest) -> Result<f64> {
    let set = EvalSet::build(manifest, None, &OverlayBank::new(), model.classes)?;
    Ok(evaluate(model, &set, 0, "")?.acc)
}

/// Fraction of triggered non-target test clips predicted as `target_label`.
pub fn compute_asr(
    model: &VictimModel,
    manifest: &Manifest,
    trigger: &TriggerSpec,
    bank: &OverlayBank,
    target_label: usize,
) -> Result<f64> {
    let set = EvalSet::build(manifest, Some(trigger), bank, target_label)?;
    evaluate(model, &set, target_label, "")?
        .asr
        .ok_or(Error::EmptyTestSet)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(i: usize, label: usize, clean: usize, trig: Option<usize>, risk: &str) -> SampleOutcome {
        SampleOutcome {
            id: format!("t{i}"),
            label,
            risk_type: Some(risk.into()),
            clean_prediction: clean,
            triggered_prediction: trig,
        }
    }

    #[test]
    fn acc_and_asr_arithmetic() {
        let mut outs: Vec<SampleOutcome> = (0..20)
            .map(|i| outcome(i, 0, 0, Some(1), if i % 2 == 0 { "fraud" } else { "violence" }))
            .collect();
        outs[0].clean_prediction = 1;
        outs[1].triggered_prediction = Some(0);
        outs[3].triggered_prediction = Some(0);
        let r = EvalReport::from_outcomes(outs, 1, "d").unwrap();
        assert_eq!(r.acc, 0.95);
        assert_eq!(r.asr, Some(0.9));
        let pr = r.per_risk.as_ref().unwrap();
        let (f, v) = (pr["fraud"], pr["violence"]);
        assert_eq!((f.acc, f.asr), (0.9, Some(1.0)));
        assert_eq!((v.acc, v.asr), (1.0, Some(0.8)));
        // per-risk rates aggregate back to the totals
        let acc = (f.acc * f.n_clean as f64 + v.acc * v.n_clean as f64) / 20.0;
        assert!((acc - r.acc).abs() < 1e-12);
    }

    #[test]
    fn no_trigger_means_no_asr() {
        let outs = vec![outcome(0, 0, 0, None, "a")];
        let r = EvalReport::from_outcomes(outs, 1, "").unwrap();
        assert_eq!((r.asr, r.n_triggered), (None, 0));
        assert!(!r.to_csv().contains("\nasr,"));
        assert!(matches!(
            EvalReport::from_outcomes(vec![], 1, ""),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let outs: Vec<SampleOutcome> = (0..7)
            .map(|i| outcome(i, i % 2, 0, (i % 2 == 0).then_some(1), "fraud"))
            .collect();
        let r = EvalReport::from_outcomes(outs, 1, "0123abcd").unwrap();
        let parsed = parse_report_csv(&r.to_csv()).unwrap();
        assert_eq!(parsed.config_digest.as_deref(), Some("0123abcd"));
        assert_eq!(parsed.get("acc"), Some((r.acc, r.n_clean)));
        assert_eq!(parsed.get("asr"), Some((r.asr.unwrap(), r.n_triggered)));
        assert_eq!(parsed.get("acc/fraud").unwrap().0, r.acc);
    }
}
