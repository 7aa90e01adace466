//! Occlusion-robust object pose estimation without the network.
//!
//! The crate covers everything around a landmark-heatmap predictor:
//!
//! - [`heatmap`]: multi-precision Gaussian targets, Jensen-Shannon loss and
//!   spatial-expectation decoding.
//! - [`filter`]: verification of high-precision landmarks against the
//!   medium-precision head.
//! - [`pnp`]: RANSAC over a P3P minimal solver with Levenberg-Marquardt
//!   refinement.
//! - [`oba`]: occlude-and-blackout batch augmentation.
//! - [`metrics`]: ADD, ADD-S, AUC and landmark coherence.
//! - [`synth`]: synthetic scenes and a heatmap corruption model that stands
//!   in for a trained network.
//! - [`dataset`] and [`pipeline`]: on-disk formats and the end-to-end run.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod filter;
pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod oba;
pub mod pipeline;
pub mod ply;
pub mod pnp;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Landmark2D, Landmark3D, PointCloud, Pose};
