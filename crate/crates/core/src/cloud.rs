//! Point-cloud containers shared by the preprocessing and matching stages.

use nalgebra::{Matrix3, Vector3};

/// A raw range scan in the sensor frame with per-point capture stamps.
#[derive(Clone, Debug, Default)]
pub struct RawScan {
    /// Scan reference stamp, seconds (start of sweep).
    pub stamp: f64,
    pub points: Vec<Vector3<f64>>,
    /// Per-point stamps; monotone non-decreasing, within the sweep.
    pub stamps: Vec<f64>,
}

impl RawScan {
    pub fn new(stamp: f64) -> Self {
        Self { stamp, points: Vec::new(), stamps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Points modeled as Gaussians `(mean, covariance)` with unit surface
/// normals; covariances are plane-regularized and symmetric PSD.
#[derive(Clone, Debug, Default)]
pub struct GaussianPointCloud {
    pub means: Vec<Vector3<f64>>,
    pub covariances: Vec<Matrix3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Per-point validity of the normal estimate; invalid normals skip
    /// surface-orientation checks downstream.
    pub normal_valid: Vec<bool>,
    pub stamps: Vec<f64>,
}

impl GaussianPointCloud {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Rigidly transform means, covariances, and normals into another frame.
    pub fn transformed(&self, pose: &crate::geometry::Pose) -> Self {
        let r = pose.rotation_matrix();
        Self {
            means: self.means.iter().map(|p| pose.transform(p)).collect(),
            covariances: self.covariances.iter().map(|c| r * c * r.transpose()).collect(),
            normals: self.normals.iter().map(|n| pose.rotate(n)).collect(),
            normal_valid: self.normal_valid.clone(),
            stamps: self.stamps.clone(),
        }
    }
}
