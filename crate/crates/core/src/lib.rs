//! Moving instance segmentation for sparse radar point clouds.
//!
//! The pipeline enriches the current radar scan with temporal information
//! from aligned previous scans (vector attention across time), extracts
//! per-point features with a full-resolution transformer backbone, predicts
//! per-point moving/static labels plus attentive instance similarities, and
//! assigns class-agnostic instance IDs by maximizing graph modularity on an
//! attention-weighted radius graph.

pub mod config;
pub mod error;
pub mod numerics;
pub mod pointcloud;
pub mod sampling;

pub use error::{Error, Result};
