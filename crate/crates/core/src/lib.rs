//! Lightweight Siamese single-object tracker.
//!
//! A shared backbone embeds a template patch and a larger detection patch,
//! squeeze-and-excitation recalibrates both feature maps, a per-channel
//! cross-correlation compares them, and a 1x1 conv + fully-connected head
//! regresses the target corners as center-relative offsets.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common choices.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tracking;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, PatchSize, RelativeOffsets};
pub use model::{ModelConfig, ModelWeights};
pub use scalar::Scalar;
pub use tensor::FeatureMap;

pub type BoundingBox32 = BoundingBox<f32>;
pub type BoundingBox64 = BoundingBox<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type Offsets32 = RelativeOffsets<f32>;
pub type Offsets64 = RelativeOffsets<f64>;
pub type Weights32 = ModelWeights<f32>;
pub type Weights64 = ModelWeights<f64>;
