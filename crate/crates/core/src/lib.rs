//! Bird's-eye-view world-model toolkit: lift-splat camera geometry, ego-motion
//! alignment, diagonal-Gaussian evidence bounds with an exact linear-Gaussian
//! oracle, future-instance decoding and tracking, losses, metrics, and a
//! synthetic planar driving simulator that provides ground truth for all of it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the scalar for the common cases; internal computation elsewhere
//! in the crate is `f64`.

pub mod camera;
pub mod egomotion;
mod error;
pub mod fields;
pub mod instances;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod probabilistic;
mod rng;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use rng::NoiseSource;
pub use scalar::Scalar;

pub type Field2D64 = fields::Field2D<f64>;
pub type Field2D32 = fields::Field2D<f32>;
pub type Field3D64 = fields::Field3D<f64>;
pub type Field3D32 = fields::Field3D<f32>;
pub type FieldSeq64 = fields::FieldSeq<f64>;
pub type SE3Pose64 = egomotion::SE3Pose<f64>;
pub type SE3Pose32 = egomotion::SE3Pose<f32>;
pub type SE2Pose64 = egomotion::SE2Pose<f64>;
pub type SE2Pose32 = egomotion::SE2Pose<f32>;
pub type BevGrid64 = camera::BevGridSpec<f64>;
pub type BevGrid32 = camera::BevGridSpec<f32>;
pub type DepthBins64 = camera::DepthBins<f64>;
pub type CameraIntrinsics64 = camera::CameraIntrinsics<f64>;
pub type CameraFeature64 = camera::CameraFeature<f64>;
pub type DiagonalGaussian64 = probabilistic::DiagonalGaussian<f64>;
pub type DiagonalGaussian32 = probabilistic::DiagonalGaussian<f32>;
