use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poison::{Manifest, Split};
use crate::seed::{self, Stage};

use super::features::{FeatureExtractor, FeatureVector};
use super::model::{Standardizer, VictimModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub classes: usize,
    /// Cepstral mean normalisation in the feature front end.
    pub cmn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            classes: 2,
            cmn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("classes must be at least 2"));
        }
        Ok(())
    }
}

/// Mean cross-entropy (nats) per optimiser step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    step: usize,
    loss: f64,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Writes `step,loss` rows.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        for (step, &loss) in self.losses.iter().enumerate() {
            w.serialize(TraceRow { step, loss })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut losses = Vec::new();
        for (i, row) in r.deserialize::<TraceRow>().enumerate() {
            let row = row?;
            if row.step != i {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("expected step {i}, found {}", row.step),
                ));
            }
            if !(row.loss.is_finite() && row.loss >= 0.0) {
                return Err(Error::format(
                    path.display().to_string(),
                    format!("step {i}: loss {} is not a finite non-negative value", row.loss),
                ));
            }
            losses.push(row.loss);
        }
        Ok(Self { losses })
    }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path.display().to_string(), format!("{other:?}")),
        }
    } else {
        e.into()
    }
}

/// Features and labels of one split, extracted in parallel.
pub fn extract_split(
    manifest: &Manifest,
    split: Split,
    cmn: bool,
) -> Result<(Vec<FeatureVector>, Vec<usize>)> {
    let records: Vec<_> = manifest.split(split).collect();
    let fx = FeatureExtractor::new(cmn);
    let features = records
        .par_iter()
        .map(|r| fx.extract(&manifest.load_audio(r)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((features, records.iter().map(|r| r.sample.label).collect()))
}

/// Trains on the manifest's train split.
pub fn train(manifest: &Manifest, config: &TrainConfig) -> Result<(VictimModel, LossTrace)> {
    config.validate()?;
    manifest.check_labels(config.classes)?;
    let (features, labels) = extract_split(manifest, Split::Train, config.cmn)?;
    train_on_features(&features, &labels, config)
}

/// Mini-batch SGD on precomputed features. The last batch of an epoch may be
/// short.
pub fn train_on_features(
    features: &[FeatureVector],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(VictimModel, LossTrace)> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= config.classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: config.classes,
        });
    }
    let standardizer = Standardizer::fit(features)?;
    let inputs: Vec<Vec<f64>> = features.iter().map(|f| standardizer.apply(&f.values)).collect();
    let mut model = VictimModel::init(config.classes, config.seed, config.cmn)?;
    let mut rng = seed::rng(config.seed, Stage::Shuffle);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut trace = LossTrace::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> =
                chunk.iter().map(|&i| (inputs[i].as_slice(), labels[i])).collect();
            let (loss, grads) = model.loss_and_grad(&batch)?;
            model.apply_gradients(&grads, config.learning_rate)?;
            trace.losses.push(loss);
        }
    }
    model.fold_standardizer(&standardizer)?;
    Ok((model, trace))
}

/// Fraction of `features` whose prediction matches `labels`.
pub fn accuracy(model: &VictimModel, features: &[FeatureVector], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &l)| model.predict_features(f).label == l)
        .count();
    Ok(correct as f64 / features.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::features::FEATURE_DIM;
    use std::fs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two Gaussian blobs separated along a random direction.
    fn toy(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir: Vec<f64> = (0..FEATURE_DIM).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            let mut values = [0.0; FEATURE_DIM];
            for (k, v) in values.iter_mut().enumerate() {
                *v = 2.0 * sign * dir[k] + rng.gen_range(-1.0..1.0) + 5.0;
            }
            feats.push(FeatureVector { values });
            labels.push(label);
        }
        (feats, labels)
    }

    #[test]
    fn separable_toy_task() {
        let (f, l) = toy(200, 1);
        let (m, trace) = train_on_features(&f, &l, &TrainConfig::default()).unwrap();
        assert!(accuracy(&m, &f, &l).unwrap() >= 0.99);
        let (tf, tl) = toy(200, 2);
        assert!(accuracy(&m, &tf, &tl).unwrap() >= 0.95);
        assert_eq!(trace.len(), 30 * 7);
        assert!(trace.losses.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn initial_loss_near_log_classes() {
        for classes in [2usize, 4] {
            let (f, _) = toy(256, 3);
            let labels: Vec<usize> = (0..f.len()).map(|i| i % classes).collect();
            let cfg = TrainConfig {
                classes,
                epochs: 1,
                ..TrainConfig::default()
            };
            let (_, trace) = train_on_features(&f, &labels, &cfg).unwrap();
            let want = (classes as f64).ln();
            assert!(
                (trace.losses[0] - want).abs() <= 0.2 * want,
                "{} vs {want}",
                trace.losses[0]
            );
        }
    }

    #[test]
    fn deterministic() {
        let (f, l) = toy(100, 5);
        let cfg = TrainConfig {
            seed: 11,
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_on_features(&f, &l, &cfg).unwrap();
        let b = train_on_features(&f, &l, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (f, mut l) = toy(10, 0);
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_on_features(&[], &[], &cfg),
            Err(Error::EmptyTrainSplit)
        ));
        l[3] = 5;
        assert!(matches!(
            train_on_features(&f, &l, &cfg),
            Err(Error::LabelOutOfRange { label: 5, .. })
        ));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trace = LossTrace {
            losses: vec![0.123456789012345, 0.5, 1e-7],
        };
        trace.save_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss\n0,0.123456789012345\n"));
        assert_eq!(LossTrace::load_csv(&path).unwrap(), trace);
        fs::write(&path, "step,loss\n0,0.5\n2,0.4\n").unwrap();
        assert!(LossTrace::load_csv(&path).is_err());
    }
}
