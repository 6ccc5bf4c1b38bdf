//! Anchor-free keyword detection in 1D audio: feature extraction, target
//! encoding, a small convolutional detector, decoding, evaluation and a
//! sliding-window baseline.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod baseline;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod trainer;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use scalar::{Matrix, Scalar};

/// Detector parameters in single precision, as used for training.
pub type Detector = model::DetectorParams<f32>;
/// Double-precision detector, used for gradient checks.
pub type Detector64 = model::DetectorParams<f64>;
pub type Classifier = model::classifier::ClassifierParams<f32>;
pub type Targets = encoder::TargetTensors<f32>;
