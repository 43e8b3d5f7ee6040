//! Voxelized distribution-to-distribution matching cost: correspondence
//! validation by surface orientation, the D2D error, its analytic
//! linearization into a linear-quadratic factor, and batched linearization.
//!
//! Conventions: `source` owns the Gaussian points, `target` owns the
//! voxelmaps; `rel = T_target^-1 * T_source` carries source-frame points into
//! the target frame. The information matrix of each correspondence is fixed
//! at the linearization point, which turns the cost into weighted least
//! squares; pose perturbations are right-multiplied twists `(omega, v)`.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use rayon::prelude::*;

use crate::cloud::GaussianPointCloud;
use crate::geometry::{skew, Pose};
use crate::voxelmap::MultiResolutionVoxelMap;
use crate::{Error, Result};

type Matrix3x6 = SMatrix<f64, 3, 6>;

/// Matching behavior knobs shared by every pipeline stage.
#[derive(Clone, Copy, Debug)]
pub struct MatchingConfig {
    /// Surface-orientation correspondence validation on/off.
    pub enable_validation: bool,
    /// Factors with fewer inliers than this are flagged degenerate.
    pub min_inliers: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self { enable_validation: true, min_inliers: 10 }
    }
}

/// One accepted point-to-voxel pairing with its frozen information matrix.
#[derive(Clone, Debug)]
pub struct Correspondence {
    pub point: u32,
    pub level: u8,
    pub voxel_mean: Vector3<f64>,
    pub omega: Matrix3<f64>,
}

/// Linearized matching factor: information blocks over the source (`i`) and
/// target (`j`) pose twists, the gradient halves, and the cost at the
/// linearization point.
#[derive(Clone, Debug)]
pub struct LinearQuadraticFactor {
    pub h_ii: Matrix6<f64>,
    pub h_ij: Matrix6<f64>,
    pub h_jj: Matrix6<f64>,
    pub b_i: Vector6<f64>,
    pub b_j: Vector6<f64>,
    pub cost: f64,
    pub num_inliers: usize,
}

impl LinearQuadraticFactor {
    pub fn zero() -> Self {
        Self {
            h_ii: Matrix6::zeros(),
            h_ij: Matrix6::zeros(),
            h_jj: Matrix6::zeros(),
            b_i: Vector6::zeros(),
            b_j: Vector6::zeros(),
            cost: 0.0,
            num_inliers: 0,
        }
    }
}

/// Visibility of a source point (with its surface normal, sensor frame `i`)
/// from the viewpoint of frame `j`. A point whose surface faces away from
/// the other viewpoint is not a valid correspondence; invalid normals skip
/// the check and count as visible.
#[inline]
pub fn validate_correspondence(
    point: &Vector3<f64>,
    normal: &Vector3<f64>,
    normal_valid: bool,
    pose_i: &Pose,
    pose_j: &Pose,
) -> bool {
    if !normal_valid {
        return true;
    }
    let viewpoint = pose_i.inverse().transform(&pose_j.translation());
    (point - viewpoint).dot(normal) <= 0.0
}

/// Distribution-to-distribution error of one pairing under relative pose
/// `rel` (source to target): returns `(cost, residual)` with
/// `residual = voxel_mean - rel * mean` and cost its squared Mahalanobis
/// norm under the combined covariance.
pub fn d2d_error(
    mean: &Vector3<f64>,
    cov: &Matrix3<f64>,
    voxel_mean: &Vector3<f64>,
    voxel_cov: &Matrix3<f64>,
    rel: &Pose,
) -> Result<(f64, Vector3<f64>)> {
    let r = rel.rotation_matrix();
    let m = voxel_cov + r * cov * r.transpose();
    let omega = m.try_inverse().ok_or(Error::SingularCovariance(0))?;
    let d = voxel_mean - rel.transform(mean);
    Ok((d.dot(&(omega * d)), d))
}

#[inline]
fn rotated_cov(rel_rot: &Matrix3<f64>, cov: &Matrix3<f64>) -> Matrix3<f64> {
    rel_rot * cov * rel_rot.transpose()
}

/// Sum of D2D errors over all levels and all validated correspondences of
/// the source cloud against the target voxelmaps. Points without a voxel at
/// a level contribute nothing at that level.
pub fn evaluate_matching_cost(
    source: &GaussianPointCloud,
    target_maps: &MultiResolutionVoxelMap,
    pose_source: &Pose,
    pose_target: &Pose,
    config: &MatchingConfig,
) -> (f64, Vec<Correspondence>) {
    let rel = pose_target.inverse() * *pose_source;
    let rel_rot = rel.rotation_matrix();
    let mut total = 0.0;
    let mut correspondences = Vec::new();
    for (idx, mean) in source.means.iter().enumerate() {
        if config.enable_validation
            && !validate_correspondence(
                mean,
                &source.normals[idx],
                source.normal_valid[idx],
                pose_source,
                pose_target,
            )
        {
            continue;
        }
        let q = rel.transform(mean);
        let rcr = rotated_cov(&rel_rot, &source.covariances[idx]);
        for (l, level) in target_maps.levels.iter().enumerate() {
            let Some(voxel) = level.lookup(&q) else { continue };
            let m = voxel.covariance + rcr;
            let Some(omega) = m.try_inverse() else { continue };
            let d = voxel.mean - q;
            total += d.dot(&(omega * d));
            correspondences.push(Correspondence {
                point: idx as u32,
                level: l as u8,
                voxel_mean: voxel.mean,
                omega,
            });
        }
    }
    (total, correspondences)
}

/// Cost-only evaluation (same sum as [`evaluate_matching_cost`] without
/// materializing the correspondence set). Returns `(cost, num_inliers)`.
pub fn matching_cost(
    source: &GaussianPointCloud,
    target_maps: &MultiResolutionVoxelMap,
    pose_source: &Pose,
    pose_target: &Pose,
    config: &MatchingConfig,
) -> (f64, usize) {
    let rel = pose_target.inverse() * *pose_source;
    let rel_rot = rel.rotation_matrix();
    let mut total = 0.0;
    let mut inliers = 0;
    for (idx, mean) in source.means.iter().enumerate() {
        if config.enable_validation
            && !validate_correspondence(
                mean,
                &source.normals[idx],
                source.normal_valid[idx],
                pose_source,
                pose_target,
            )
        {
            continue;
        }
        let q = rel.transform(mean);
        let rcr = rotated_cov(&rel_rot, &source.covariances[idx]);
        for level in &target_maps.levels {
            let Some(voxel) = level.lookup(&q) else { continue };
            let m = voxel.covariance + rcr;
            let Some(omega) = m.try_inverse() else { continue };
            let d = voxel.mean - q;
            total += d.dot(&(omega * d));
            inliers += 1;
        }
    }
    (total, inliers)
}

/// Cost of a frozen correspondence set re-evaluated at new poses (residuals
/// move, information matrices stay). This is the weighted-least-squares
/// objective the linear-quadratic factor models.
pub fn frozen_cost(
    correspondences: &[Correspondence],
    source: &GaussianPointCloud,
    pose_source: &Pose,
    pose_target: &Pose,
) -> f64 {
    let rel = pose_target.inverse() * *pose_source;
    correspondences
        .iter()
        .map(|c| {
            let d = c.voxel_mean - rel.transform(&source.means[c.point as usize]);
            d.dot(&(c.omega * d))
        })
        .sum()
}

/// Analytic linearization of the matching cost at the given poses.
///
/// Residual Jacobians per correspondence, with `q = rel * mean`:
/// `J_src = [R_rel skew(mean) | -R_rel]`, `J_tgt = [-skew(q) | I]`;
/// blocks accumulate as `H = J^T Omega J`, `b = J^T Omega d`.
pub fn linearize(
    source: &GaussianPointCloud,
    target_maps: &MultiResolutionVoxelMap,
    pose_source: &Pose,
    pose_target: &Pose,
    config: &MatchingConfig,
) -> LinearQuadraticFactor {
    let rel = pose_target.inverse() * *pose_source;
    let rel_rot = rel.rotation_matrix();
    let mut out = LinearQuadraticFactor::zero();
    let mut j_src = Matrix3x6::zeros();
    let mut j_tgt = Matrix3x6::zeros();
    j_tgt.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());

    for (idx, mean) in source.means.iter().enumerate() {
        if config.enable_validation
            && !validate_correspondence(
                mean,
                &source.normals[idx],
                source.normal_valid[idx],
                pose_source,
                pose_target,
            )
        {
            continue;
        }
        let q = rel.transform(mean);
        let rcr = rotated_cov(&rel_rot, &source.covariances[idx]);
        j_src.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rel_rot * skew(mean)));
        j_src.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rel_rot));
        j_tgt.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&q)));

        for level in &target_maps.levels {
            let Some(voxel) = level.lookup(&q) else { continue };
            let m = voxel.covariance + rcr;
            let Some(omega) = m.try_inverse() else { continue };
            let d = voxel.mean - q;

            let om_src = omega * j_src;
            let om_tgt = omega * j_tgt;
            out.h_ii += j_src.transpose() * om_src;
            out.h_ij += j_src.transpose() * om_tgt;
            out.h_jj += j_tgt.transpose() * om_tgt;
            out.b_i += om_src.transpose() * d;
            out.b_j += om_tgt.transpose() * d;
            out.cost += d.dot(&(omega * d));
            out.num_inliers += 1;
        }
    }
    out
}

/// One linearization task of a batch: borrowed immutable inputs plus the
/// linearization-point poses gathered from the caller's pose table.
pub struct LinearizeTask<'a> {
    pub source: &'a GaussianPointCloud,
    pub target_maps: &'a MultiResolutionVoxelMap,
    pub pose_source: Pose,
    pub pose_target: Pose,
    pub config: MatchingConfig,
}

/// Linearizes a batch of matching factors in one gather/scatter pass, data
/// parallel across factors. Output order matches input order, and each
/// factor's accumulation is sequential, so results are bitwise deterministic
/// for a fixed input ordering regardless of thread count.
pub fn batch_linearize(tasks: &[LinearizeTask<'_>]) -> Vec<LinearQuadraticFactor> {
    tasks
        .par_iter()
        .map(|t| linearize(t.source, t.target_maps, &t.pose_source, &t.pose_target, &t.config))
        .collect()
}
