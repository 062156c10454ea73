//! Multi-view pseudo-labelling for egocentric 3D pose estimation.
//!
//! A head-mounted fisheye camera and a static external camera observe the
//! same person. Short windows of frames are refined jointly by minimizing a
//! weighted energy over poses and external-camera extrinsics, and the result
//! is turned into training targets for an egocentric estimator.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Joint-indexed arrays are walked in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod optimize;
pub mod par;
pub mod pipeline;
pub mod prior;
pub mod skeleton;
pub mod synth;
pub mod training_losses;

pub use error::{Error, Result};
