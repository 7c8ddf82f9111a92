//! Lidar place recognition and relative pose estimation on bird's-eye-view
//! (BV) density images.
//!
//! The pipeline projects a 3D point cloud onto the ground plane, normalizes
//! per-cell point counts into a BV image, extracts rotation-invariant local
//! descriptors from the maximum index map of a Log-Gabor filter bank, and
//! supports bag-of-words place retrieval plus RANSAC + planar ICP pose
//! estimation between frames.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod bvft;
pub mod bvimage;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod loggabor;
pub mod pipeline;
pub mod pointcloud;
pub mod registration;
pub mod retrieval;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pointcloud::{Point3, PointCloud, Pose2D};
