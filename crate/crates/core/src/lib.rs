//! Single-object tracking in LiDAR point clouds under large frame-to-frame
//! motion: geometry, KITTI and synthetic data, the tracking network, the
//! online tracker, training and one-pass evaluation.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod synth;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
