use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poison::{inject, Manifest, PoisonPlan};
use crate::trigger::{OverlayBank, TriggerSpec};
use crate::victim::{train, TrainConfig};

use super::{evaluate, EvalSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub rhos: Vec<f64>,
    pub trigger: TriggerSpec,
    pub target_label: usize,
    pub target_response: String,
    /// Poison-selection seed; training uses `train.seed`.
    pub seed: u64,
    pub train: TrainConfig,
    /// Run points concurrently. Results are identical either way.
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rho: f64,
    pub acc: f64,
    pub asr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub trigger: TriggerSpec,
}

impl SweepResult {
    /// `rho,acc,asr,seed` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,acc,asr,seed\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.rho, p.acc, p.asr, p.seed);
        }
        out
    }

    pub fn from_csv(text: &str, trigger: TriggerSpec) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let points = reader
            .deserialize::<SweepPoint>()
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { points, trigger })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains one victim per poisoning rate and records ACC/ASR on the test
/// split. Poisoned sets for point `i` are written to `work_dir/rho_<i>`.
///
/// Selection is nested across rates: the set for a larger `rho` contains the
/// set for any smaller one.
pub fn ratio_sweep(
    manifest: &Manifest,
    plan: &SweepPlan,
    bank: &OverlayBank,
    work_dir: impl AsRef<Path>,
) -> Result<SweepResult> {
    if plan.rhos.is_empty() {
        return Err(Error::EmptySeries);
    }
    if plan.rhos.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("rhos must be strictly increasing"));
    }
    if let Some(r) = plan.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("rho {r} outside [0, 1]")));
    }
    let work_dir = work_dir.as_ref();
    let eval_set = EvalSet::build(manifest, Some(&plan.trigger), bank, plan.target_label)?;
    let run = |(i, &rho): (usize, &f64)| -> Result<SweepPoint> {
        let poison = PoisonPlan {
            rho,
            trigger: plan.trigger.clone(),
            target_label: plan.target_label,
            target_response: plan.target_response.clone(),
            seed: plan.seed,
        };
        let poisoned = inject(manifest, &poison, bank, work_dir.join(format!("rho_{i}")))?;
        let (model, _) = train(&poisoned.manifest, &plan.train)?;
        let report = evaluate(&model, &eval_set, plan.target_label, "")?;
        Ok(SweepPoint {
            rho,
            acc: report.acc,
            asr: report.asr.ok_or(Error::EmptyTestSet)?,
            seed: plan.seed,
        })
    };
    let points = if plan.parallel {
        plan.rhos.par_iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        plan.rhos.iter().enumerate().map(run).collect::<Result<_>>()?
    };
    Ok(SweepResult {
        points,
        trigger: plan.trigger.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let r = SweepResult {
            points: vec![
                SweepPoint { rho: 0.01, acc: 0.985, asr: 0.31, seed: 7 },
                SweepPoint { rho: 0.02, acc: 1.0, asr: 2.0 / 3.0, seed: 7 },
            ],
            trigger: TriggerSpec::Volume { alpha: 2.0 },
        };
        let text = r.to_csv();
        assert!(text.starts_with("rho,acc,asr,seed\n0.01,0.985,0.31,7\n"));
        assert_eq!(SweepResult::from_csv(&text, r.trigger.clone()).unwrap(), r);
    }
}
