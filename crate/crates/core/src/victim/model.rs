use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::seed::{self, Stage};

use super::features::{FeatureExtractor, FeatureVector, FEATURE_DIM};

pub const HIDDEN: usize = 64;
const CHECKPOINT_FORMAT: &str = "acbd-victim";
const CHECKPOINT_VERSION: u32 = 1;

/// Per-feature affine normalisation fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation per column; near-constant
    /// columns keep unit scale.
    pub fn fit(features: &[FeatureVector]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyTrainSplit);
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for f in features {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; FEATURE_DIM];
        for f in features {
            for ((s, v), m) in scale.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// `FEATURE_DIM -> HIDDEN (ReLU) -> classes (softmax)` classifier.
///
/// Weight matrices are row-major with one row per output unit. Weights act on
/// raw feature vectors; any input standardisation used during training is
/// folded into the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimModel {
    pub classes: usize,
    pub seed: u64,
    pub cmn: bool,
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, laid out like [`VictimModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: VictimModel,
}

impl VictimModel {
    /// Uniform `±1/sqrt(fan_in)` initialisation, biases included.
    pub fn init(classes: usize, seed: u64, cmn: bool) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = seed::rng(seed, Stage::Init);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = uniform(HIDDEN * FEATURE_DIM, FEATURE_DIM);
        let b1 = uniform(HIDDEN, FEATURE_DIM);
        let w2 = uniform(classes * HIDDEN, HIDDEN);
        let b2 = uniform(classes, HIDDEN);
        Ok(Self {
            classes,
            seed,
            cmn,
            input_dim: FEATURE_DIM,
            hidden: HIDDEN,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn same_topology(&self, other: &Self) -> bool {
        self.classes == other.classes
            && self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.cmn == other.cmn
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Trainable parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.param_count(),
            });
        }
        let mut rest = params;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Rewrites the first layer so that the model applied to raw `x` equals
    /// the current model applied to `standardizer.apply(x)`.
    pub fn fold_standardizer(&mut self, standardizer: &Standardizer) -> Result<()> {
        if standardizer.mean.len() != self.input_dim || standardizer.scale.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                left: standardizer.mean.len(),
                right: self.input_dim,
            });
        }
        let d = self.input_dim;
        for j in 0..self.hidden {
            let row = &mut self.w1[j * d..(j + 1) * d];
            for (i, w) in row.iter_mut().enumerate() {
                *w /= standardizer.scale[i];
                self.b1[j] -= *w * standardizer.mean[i];
            }
        }
        Ok(())
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                let z = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect()
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
                self.b2[c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Class probabilities for a raw feature vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(&self.hidden_activations(x)))
    }

    pub fn predict_features(&self, features: &FeatureVector) -> Prediction {
        let scores = self.forward(&features.values);
        Prediction {
            label: argmax(&scores),
            scores,
        }
    }

    pub fn predict(&self, clip: &AudioClip) -> Result<Prediction> {
        self.predict_with(&FeatureExtractor::new(self.cmn), clip)
    }

    /// Like [`predict`](Self::predict) with a reusable extractor.
    pub fn predict_with(&self, extractor: &FeatureExtractor, clip: &AudioClip) -> Result<Prediction> {
        if extractor.cmn() != self.cmn {
            return Err(Error::invalid("feature extractor CMN setting differs from model"));
        }
        Ok(self.predict_features(&extractor.extract(clip)?))
    }

    /// Mean cross-entropy over `(input, label)` pairs and its
    /// gradient with respect to [`params`](Self::params).
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (d, hdim, c) = (self.input_dim, self.hidden, self.classes);
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; hdim];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; c];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, label) in batch {
            if label >= c {
                return Err(Error::LabelOutOfRange { label, classes: c });
            }
            let h = self.hidden_activations(x);
            let logits = self.logits(&h);
            loss += scale * (log_sum_exp(&logits) - logits[label]);
            let mut delta = softmax(&logits);
            delta[label] -= 1.0;
            for (k, dk) in delta.iter().enumerate() {
                let g = dk * scale;
                gb2[k] += g;
                for j in 0..hdim {
                    gw2[k * hdim + j] += g * h[j];
                }
            }
            for j in 0..hdim {
                if h[j] <= 0.0 {
                    continue;
                }
                let back: f64 = (0..c).map(|k| delta[k] * self.w2[k * hdim + j]).sum::<f64>() * scale;
                gb1[j] += back;
                for (g, v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += back * v;
                }
            }
        }
        Ok((loss, Gradients([gw1, gb1, gw2, gb2].concat())))
    }

    /// In-place `params -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        let mut p = self.params();
        if grads.0.len() != p.len() {
            return Err(Error::LengthMismatch {
                left: grads.0.len(),
                right: p.len(),
            });
        }
        for (w, g) in p.iter_mut().zip(&grads.0) {
            *w -= learning_rate * g;
        }
        self.set_params(&p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        fs::write(path, serde_json::to_string(&ckpt)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let ctx = || path.display().to_string();
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::format(ctx(), format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::format(ctx(), format!("unsupported version {}", ckpt.version)));
        }
        let m = ckpt.model;
        let consistent = m.input_dim == FEATURE_DIM
            && m.w1.len() == m.hidden * m.input_dim
            && m.b1.len() == m.hidden
            && m.w2.len() == m.classes * m.hidden
            && m.b2.len() == m.classes;
        if !consistent {
            return Err(Error::format(ctx(), "parameter shapes do not match topology"));
        }
        if !m.params().iter().all(|p| p.is_finite()) {
            return Err(Error::format(ctx(), "non-finite parameter"));
        }
        Ok(m)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
