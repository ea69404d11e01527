//! Loss-differential statistics comparing a poisoned training run with a clean
//! one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::victim::LossTrace;

/// Below this magnitude the mean is treated as zero and CV is undefined.
pub const CV_MEAN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialReport {
    pub series: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Signed `sigma / mean`; `None` when the mean is (numerically) zero.
    pub cv: Option<f64>,
    pub cv_defined: bool,
}

/// Per-step `triggered[t] - clean[t]`.
pub fn loss_differential(triggered: &LossTrace, clean: &LossTrace) -> Result<Vec<f64>> {
    if triggered.is_empty() || clean.is_empty() {
        return Err(Error::EmptySeries);
    }
    if triggered.len() != clean.len() {
        return Err(Error::LengthMismatch {
            left: triggered.len(),
            right: clean.len(),
        });
    }
    Ok(triggered
        .losses
        .iter()
        .zip(&clean.losses)
        .map(|(a, b)| a - b)
        .collect())
}

pub fn mean(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Population variance.
pub fn variance(series: &[f64]) -> Result<f64> {
    let m = mean(series)?;
    Ok(series.iter().map(|x| (x - m).powi(2)).sum::<f64>() / series.len() as f64)
}

/// Signed coefficient of variation, population sigma over mean.
pub fn coefficient_of_variation(series: &[f64]) -> Result<f64> {
    let m = mean(series)?;
    if m.abs() < CV_MEAN_EPSILON {
        return Err(Error::UndefinedCv(m));
    }
    Ok(variance(series)?.sqrt() / m)
}

pub fn summarize(triggered: &LossTrace, clean: &LossTrace) -> Result<DifferentialReport> {
    let series = loss_differential(triggered, clean)?;
    let mean = mean(&series)?;
    let variance = variance(&series)?;
    let cv = match coefficient_of_variation(&series) {
        Ok(cv) => Some(cv),
        Err(Error::UndefinedCv(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(DifferentialReport {
        series,
        mean,
        variance,
        cv_defined: cv.is_some(),
        cv,
    })
}

impl DifferentialReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the series as `step,differential` rows.
    pub fn save_series_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("step,differential\n");
        for (i, v) in self.series.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
