//! Range-inertial localization and mapping toolkit.
//!
//! The estimator is organized as three stages sharing one set of building
//! blocks: keyframe-based fixed-lag odometry, submap local mapping, and a
//! global stage that minimizes registration errors between all overlapping
//! submaps with inertial endpoint constraints. A deterministic sensor
//! simulator and a trajectory evaluator round out the crate so the whole
//! pipeline can be exercised end to end without hardware.

pub mod cloud;
pub mod evaluate;
pub mod geometry;
pub mod global_mapping;
pub mod imu;
pub mod local_mapping;
pub mod matching;
pub mod odometry;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod visual;
pub mod voxelmap;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
