//! Gender recognition from surveillance imagery via face/body feature
//! fusion.
//!
//! The crate covers the full pipeline around a fusion-attention classifier:
//!
//! - [`pose`] parses per-image keypoint skeletons.
//! - [`geometry`] classifies body orientation and locates head regions.
//! - [`quality`] scores image luminosity, blurriness, and resolution.
//! - [`builder`] assembles frontal subsets, head crops, metadata tables,
//!   and split-ratio reports for dataset curation.
//! - [`fam`] implements the fusion-attention module itself: forward pass,
//!   gated face/body classification, analytic gradients with a finite
//!   difference harness, a small trainer, and parameter checkpoints.
//! - [`metrics`] computes mean accuracy and error-reduction summaries.
//!
//! Numeric code is generic over the [`Real`] scalar trait; `f64` is the
//! reference precision and `f32` is supported throughout. The `*64`/`*32`
//! aliases below pick a concrete scalar for callers that do not need the
//! generics.

pub mod builder;
pub mod fam;
pub mod geometry;
pub mod metrics;
pub mod pose;
pub mod quality;
pub mod real;
pub mod tensor;

pub use real::Real;

/// Double-precision tensor.
pub type Tensor64 = tensor::Tensor<f64>;
/// Single-precision tensor.
pub type Tensor32 = tensor::Tensor<f32>;

/// Double-precision fusion-attention parameters.
pub type FamParams64 = fam::FamParams<f64>;
/// Single-precision fusion-attention parameters.
pub type FamParams32 = fam::FamParams<f32>;

/// Double-precision pose skeleton.
pub type PoseSkeleton64 = pose::PoseSkeleton<f64>;
/// Double-precision geometry configuration.
pub type GeometryConfig64 = geometry::GeometryConfig<f64>;
/// Double-precision head region.
pub type HeadRoi64 = geometry::HeadRoi<f64>;
/// Double-precision training configuration.
pub type TrainConfig64 = fam::TrainConfig<f64>;
