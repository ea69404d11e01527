//! Desk-scale victim: MFCC statistics fed to a one-hidden-layer classifier
//! trained with plain mini-batch SGD.

mod features;
mod model;
mod train;

pub use features::{
    extract_features, FeatureExtractor, FeatureVector, FEATURE_DIM, FRAME_HOP, FRAME_LENGTH,
    N_MFCC,
};
pub use model::{argmax, Gradients, Prediction, Standardizer, VictimModel, HIDDEN};
pub use train::{accuracy, extract_split, train, train_on_features, LossTrace, TrainConfig};
