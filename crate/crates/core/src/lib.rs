//! Sound-to-vibration synthesis with an operational U-Net (Self-ONN layers
//! built from generative neurons), trained in cascade with a frozen Self-ONN
//! fault detector.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` and `f64`). Training
//! and inference normally run in `f32`; `f64` is there for gradient checks.

pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod numeric;
pub mod scalar;
pub mod selfonn;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{compute_metrics, MetricsReport};
pub use models::{ClassifierConfig, FaultClassifier, Model, OpUNet, OpUNetConfig};
pub use numeric::{FeatureMap, Tensor};
pub use scalar::Scalar;
pub use signal::{Label, SegmentPair, Signal};
pub use training::{SplitConfig, TrainConfig};

pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type OpUNet32 = OpUNet<f32>;
pub type OpUNet64 = OpUNet<f64>;
pub type FaultClassifier32 = FaultClassifier<f32>;
pub type FaultClassifier64 = FaultClassifier<f64>;
