//! Dynamic erasing network for weakly supervised video anomaly detection.
//!
//! A video is a `T x D` matrix of segment features. [`mstm::Mstm`] mixes temporal
//! context at several strides, [`head::ScoringHead`] turns each segment into an
//! anomaly score, and training alternates an ordinary pass with a pass over abnormal
//! videos whose most confident segments have been erased ([`erasing`]).

pub mod checkpoint;
pub mod erasing;
pub mod error;
pub mod eval;
pub mod features;
pub mod head;
pub mod model;
pub mod mstm;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use erasing::EraseMode;
pub use error::{Error, Result};
pub use eval::{EvalReport, FramePrediction};
pub use features::{DatasetManifest, SegmentFeatures, Split};
pub use model::{DeNet, ModelConfig};
pub use train::{TrainConfig, Trainer, TrainingSet};
