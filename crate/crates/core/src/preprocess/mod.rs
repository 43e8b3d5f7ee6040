//! Scan preprocessing: voxel downsampling, exact neighbor search, per-point
//! covariance estimation, and IMU-predicted deskewing.
//!
//! The neighbor table is computed once, before deskewing, and reused for
//! covariance estimation afterwards; neighborhood relations are assumed not
//! to change meaningfully under motion compensation.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Vector3};

use crate::cloud::{GaussianPointCloud, RawScan};
use crate::geometry::{slerp_pose, SensorState};
use crate::imu::{predict, GravityVector, ImuMeasurement};
use crate::voxelmap::{VoxelCoord, VoxelHashMap};
use crate::{Error, Result};

/// Neighbor indices per point; `short` marks rows truncated because the
/// cloud had fewer than `k` points.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub rows: Vec<Vec<u32>>,
    pub short: bool,
    pub k: usize,
}

/// Keeps one representative point per voxel: the member closest to the voxel
/// centroid, ties by lowest index. Attributes of the chosen original point
/// are preserved unmixed; output is ordered by original index and capped at
/// `max_points`.
pub fn voxel_downsample(scan: &RawScan, resolution: f64, max_points: usize) -> RawScan {
    assert!(resolution > 0.0, "downsample resolution must be positive");
    if scan.is_empty() {
        return RawScan::new(scan.stamp);
    }
    let inv = 1.0 / resolution;
    let mut bins: VoxelHashMap<Vec<u32>> = VoxelHashMap::default();
    for (i, p) in scan.points.iter().enumerate() {
        bins.entry(VoxelCoord::of(p, inv)).or_default().push(i as u32);
    }
    let mut selected: Vec<u32> = bins
        .values()
        .map(|members| {
            let centroid =
                members.iter().map(|&i| scan.points[i as usize]).sum::<Vector3<f64>>()
                    / members.len() as f64;
            let mut best = members[0];
            let mut best_d = f64::INFINITY;
            for &i in members {
                let d = (scan.points[i as usize] - centroid).norm_squared();
                if d < best_d || (d == best_d && i < best) {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    selected.sort_unstable();
    selected.truncate(max_points);

    let mut out = RawScan::new(scan.stamp);
    out.points = selected.iter().map(|&i| scan.points[i as usize]).collect();
    out.stamps = selected.iter().map(|&i| scan.stamps[i as usize]).collect();
    out
}

/// Exact k-nearest-neighbor table (each point's own index is included).
/// Clouds smaller than `k` return all available indices with the table
/// flagged short.
pub fn knn_search(points: &[Vector3<f64>], k: usize) -> NeighborTable {
    assert!(k >= 1, "k must be at least 1");
    assert!(!points.is_empty(), "knn_search on empty cloud");
    let effective = k.min(points.len());
    let tree = KdTree::build(points);
    let rows: Vec<Vec<u32>> = points.iter().map(|p| tree.knn(p, effective)).collect();
    NeighborTable { rows, short: effective < k, k }
}

/// Parameters for plane-regularized covariance estimation.
#[derive(Clone, Copy, Debug)]
pub struct CovarianceConfig {
    /// Smallest remapped eigenvalue of the plane model.
    pub plane_eps: f64,
    /// Isotropic floor for degenerate neighborhoods.
    pub degenerate_eps: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self { plane_eps: 1e-3, degenerate_eps: 1e-6 }
    }
}

/// Neighbor sample covariances with GICP-style plane regularization.
///
/// Eigenvalues are remapped to `(plane_eps, 1, 1)` and rescaled so the trace
/// is preserved; the normal is the smallest-eigenvalue direction oriented
/// toward the sensor origin. Neighborhoods with fewer than four points (or a
/// collapsed spread) fall back to an eigenvalue floor and an invalid normal.
pub fn estimate_covariances(
    scan: &RawScan,
    neighbors: &NeighborTable,
    config: &CovarianceConfig,
) -> GaussianPointCloud {
    let n = scan.len();
    assert_eq!(neighbors.rows.len(), n, "neighbor table size mismatch");
    let mut cloud = GaussianPointCloud {
        means: scan.points.clone(),
        covariances: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        normal_valid: Vec::with_capacity(n),
        stamps: scan.stamps.clone(),
    };

    for (i, row) in neighbors.rows.iter().enumerate() {
        let count = row.len();
        let mean = row.iter().map(|&j| scan.points[j as usize]).sum::<Vector3<f64>>()
            / count as f64;
        let mut scatter = Matrix3::zeros();
        for &j in row {
            let d = scan.points[j as usize] - mean;
            scatter += d * d.transpose();
        }
        scatter /= count as f64;

        let eig = nalgebra::SymmetricEigen::new(scatter);
        // Ascending eigenvalue order.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let lambda = [
            eig.eigenvalues[order[0]].max(0.0),
            eig.eigenvalues[order[1]].max(0.0),
            eig.eigenvalues[order[2]].max(0.0),
        ];
        let axes = [
            eig.eigenvectors.column(order[0]).into_owned(),
            eig.eigenvectors.column(order[1]).into_owned(),
            eig.eigenvectors.column(order[2]).into_owned(),
        ];

        let degenerate = lambda[2] < 1e-12;
        let planar_ok = count >= 4 && !degenerate && lambda[1] > 1e-3 * lambda[2];

        let cov = if degenerate {
            Matrix3::identity() * config.degenerate_eps
        } else if count >= 4 {
            let scale = (lambda[0] + lambda[1] + lambda[2]) / (config.plane_eps + 2.0);
            let l = [
                (config.plane_eps * scale).max(config.degenerate_eps),
                scale.max(config.degenerate_eps),
                scale.max(config.degenerate_eps),
            ];
            rebuild(&axes, &l)
        } else {
            // Too few neighbors for a plane model: floor the eigenvalues.
            let l = [
                lambda[0].max(config.degenerate_eps),
                lambda[1].max(config.degenerate_eps),
                lambda[2].max(config.degenerate_eps),
            ];
            rebuild(&axes, &l)
        };

        let mut normal = axes[0];
        // Orient toward the sensor origin (points are in the sensor frame).
        if normal.dot(&scan.points[i]) > 0.0 {
            normal = -normal;
        }
        cloud.covariances.push(cov);
        cloud.normals.push(normal);
        cloud.normal_valid.push(planar_ok);
    }
    cloud
}

fn rebuild(axes: &[Vector3<f64>; 3], lambda: &[f64; 3]) -> Matrix3<f64> {
    let mut c = Matrix3::zeros();
    for (axis, &l) in axes.iter().zip(lambda) {
        c += axis * axis.transpose() * l;
    }
    // Exact symmetry by construction aside from rounding; enforce it.
    (c + c.transpose()) * 0.5
}

/// Motion compensation: each point is re-expressed in the frame of the
/// scan-start pose using the IMU-predicted pose at its own stamp.
///
/// `anchor` carries pose/velocity/bias at the scan start. A scan whose
/// stamps are all equal (distortion-free sensor) is returned unchanged.
pub fn deskew(
    scan: &RawScan,
    imu_stream: &[ImuMeasurement],
    anchor: &SensorState,
    gravity: &GravityVector,
) -> Result<RawScan> {
    if scan.is_empty() {
        return Ok(scan.clone());
    }
    let t_min = scan.stamps.iter().cloned().fold(f64::INFINITY, f64::min);
    let t1 = scan.stamps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t0 = t_min.min(anchor.stamp);
    if t1 - t0 <= 0.0 {
        // Distortion-free capture: every point already sits at the anchor.
        return Ok(scan.clone());
    }

    let slice = crate::imu::slice_between(imu_stream, anchor.stamp.min(t0), t1);
    if slice.len() < 2 || slice[0].stamp > t0 || slice[slice.len() - 1].stamp < t1 - 1e-9 {
        // The last sample may hold through the scan end; only the leading
        // edge must be covered.
        if slice.is_empty() || slice[0].stamp > t0 {
            return Err(Error::ImuCoverage(t0, t1));
        }
    }
    let mut diffs: Vec<f64> = slice.windows(2).map(|w| w[1].stamp - w[0].stamp).collect();
    if !diffs.is_empty() {
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nominal = diffs[diffs.len() / 2];
        for w in slice.windows(2) {
            let gap = w[1].stamp - w[0].stamp;
            if gap > 2.0 * nominal && w[1].stamp > t0 && w[0].stamp < t1 {
                return Err(Error::ImuGap { start: w[0].stamp, end: w[1].stamp, gap, nominal });
            }
        }
    }

    let states = predict(anchor, slice, gravity);
    let start_inv = anchor.pose.inverse();

    let mut out = RawScan::new(scan.stamp);
    out.points.reserve(scan.len());
    out.stamps = scan.stamps.clone();
    for (p, &t) in scan.points.iter().zip(&scan.stamps) {
        let idx = states.partition_point(|s| s.stamp <= t);
        let pose_t = if idx == 0 {
            states[0].pose
        } else if idx >= states.len() {
            states[states.len() - 1].pose
        } else {
            let (a, b) = (&states[idx - 1], &states[idx]);
            let alpha = ((t - a.stamp) / (b.stamp - a.stamp)).clamp(0.0, 1.0);
            slerp_pose(&a.pose, &b.pose, alpha)
        };
        out.points.push((start_inv * pose_t).transform(p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scan_from(points: Vec<Vector3<f64>>) -> RawScan {
        let n = points.len();
        RawScan { stamp: 0.0, points, stamps: vec![0.0; n] }
    }

    #[test]
    fn downsample_cube_corners_to_one_point() {
        let mut points = Vec::new();
        for dx in [0.0, 0.1] {
            for dy in [0.0, 0.1] {
                for dz in [0.0, 0.1] {
                    points.push(Vector3::new(dx, dy, dz));
                }
            }
        }
        let out = voxel_downsample(&scan_from(points), 1.0, usize::MAX);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn downsample_grid_preserved_at_fine_resolution() {
        let mut points = Vec::new();
        for x in 0..10 {
            for y in 0..10 {
                points.push(Vector3::new(x as f64, y as f64, 0.0));
            }
        }
        let out = voxel_downsample(&scan_from(points), 0.5, usize::MAX);
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn downsample_count_matches_brute_force_bins() {
        let mut rng = StdRng::seed_from_u64(3);
        let points: Vec<Vector3<f64>> = (0..10_000)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                )
            })
            .collect();
        let r = 0.9;
        let mut bins = std::collections::HashSet::new();
        for p in &points {
            bins.insert((
                (p.x / r).floor() as i64,
                (p.y / r).floor() as i64,
                (p.z / r).floor() as i64,
            ));
        }
        let out = voxel_downsample(&scan_from(points), r, usize::MAX);
        assert_eq!(out.len(), bins.len());
    }

    #[test]
    fn downsample_idempotent() {
        let mut rng = StdRng::seed_from_u64(8);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let once = voxel_downsample(&scan_from(points), 0.5, usize::MAX);
        let twice = voxel_downsample(&once, 0.5, usize::MAX);
        assert_eq!(once.points, twice.points);
        assert_eq!(once.stamps, twice.stamps);
    }

    #[test]
    fn downsample_empty_scan() {
        let out = voxel_downsample(&RawScan::new(0.0), 0.5, 100);
        assert!(out.is_empty());
    }

    #[test]
    fn knn_collinear_points() {
        let points =
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 0.0, 0.0)];
        let table = knn_search(&points, 2);
        assert_eq!(table.rows[1], vec![1, 0]);
        assert!(!table.short);
    }

    #[test]
    fn knn_short_cloud_flagged() {
        let points = vec![Vector3::new(1.0, 2.0, 3.0)];
        let table = knn_search(&points, 5);
        assert_eq!(table.rows[0], vec![0]);
        assert!(table.short);
    }

    #[test]
    fn knn_matches_brute_force_on_random_cloud() {
        let mut rng = StdRng::seed_from_u64(21);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let table = knn_search(&points, 10);
        for (i, row) in table.rows.iter().enumerate() {
            let mut d: Vec<(f64, u32)> = points
                .iter()
                .enumerate()
                .map(|(j, p)| ((p - points[i]).norm_squared(), j as u32))
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<u32> = d.into_iter().take(10).map(|(_, j)| j).collect();
            assert_eq!(row, &want, "row {i}");
        }
    }

    #[test]
    fn covariance_planar_neighborhood_gets_z_normal() {
        let mut points = Vec::new();
        for x in -2..=2 {
            for y in -2..=2 {
                points.push(Vector3::new(x as f64 * 0.1, y as f64 * 0.1 + 3.0, 0.0));
            }
        }
        let scan = scan_from(points);
        let table = knn_search(&scan.points, 10);
        let cloud = estimate_covariances(&scan, &table, &CovarianceConfig::default());
        for (n, &valid) in cloud.normals.iter().zip(&cloud.normal_valid) {
            assert!(valid);
            assert_relative_eq!(n.x.abs(), 0.0, epsilon = 1e-9);
            assert_relative_eq!(n.y.abs(), 0.0, epsilon = 1e-9);
            assert_relative_eq!(n.z.abs(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn covariance_eigenvectors_match_direct_decomposition() {
        let mut rng = StdRng::seed_from_u64(4);
        // Anisotropic axis-aligned Gaussian sample.
        let points: Vec<Vector3<f64>> = (0..200)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0) * 2.0,
                    rng.random_range(-1.0..1.0) * 0.5,
                    rng.random_range(-1.0..1.0) * 0.05,
                )
            })
            .collect();
        let scan = scan_from(points.clone());
        let table = NeighborTable {
            rows: vec![(0..points.len() as u32).collect(); points.len()],
            short: false,
            k: points.len(),
        };
        let cloud = estimate_covariances(&scan, &table, &CovarianceConfig::default());

        // Direct sample covariance eigendecomposition as the oracle.
        let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
        let mut scatter = Matrix3::zeros();
        for p in &points {
            scatter += (p - mean) * (p - mean).transpose();
        }
        scatter /= points.len() as f64;
        let eig = nalgebra::SymmetricEigen::new(scatter);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let smallest = eig.eigenvectors.column(order[0]).into_owned();

        // The regularized covariance keeps the same eigenvector frame.
        let reg_eig = nalgebra::SymmetricEigen::new(cloud.covariances[0]);
        let mut ro = [0usize, 1, 2];
        ro.sort_by(|&a, &b| reg_eig.eigenvalues[a].partial_cmp(&reg_eig.eigenvalues[b]).unwrap());
        let reg_smallest = reg_eig.eigenvectors.column(ro[0]).into_owned();
        assert!(smallest.dot(&reg_smallest).abs() > 1.0 - 1e-6);
    }

    #[test]
    fn covariance_degenerate_line_floors_two_directions() {
        let points = vec![
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.1, 2.0, 0.0),
            Vector3::new(0.2, 2.0, 0.0),
        ];
        let scan = scan_from(points);
        let table = NeighborTable { rows: vec![vec![0, 1, 2]; 3], short: true, k: 3 };
        let cloud = estimate_covariances(&scan, &table, &CovarianceConfig::default());
        let eig = nalgebra::SymmetricEigen::new(cloud.covariances[0]);
        let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(vals[0], 1e-6, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 1e-6, epsilon = 1e-12);
        assert!(vals[2] > 1e-3);
        assert!(!cloud.normal_valid[0]);
    }

    #[test]
    fn covariance_coincident_points_isotropic() {
        let points = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        let scan = scan_from(points);
        let table = NeighborTable { rows: vec![vec![0, 1, 2, 3, 4]; 5], short: false, k: 5 };
        let cloud = estimate_covariances(&scan, &table, &CovarianceConfig::default());
        assert_relative_eq!(cloud.covariances[0], Matrix3::identity() * 1e-6, epsilon = 1e-15);
        assert!(!cloud.normal_valid[0]);
    }

    #[test]
    fn covariance_symmetry_and_floor() {
        let mut rng = StdRng::seed_from_u64(10);
        let points: Vec<Vector3<f64>> = (0..300)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-0.01..0.01),
                )
            })
            .collect();
        let scan = scan_from(points);
        let table = knn_search(&scan.points, 10);
        let cloud = estimate_covariances(&scan, &table, &CovarianceConfig::default());
        for c in &cloud.covariances {
            let asym = (c - c.transpose()).abs().max();
            assert_eq!(asym, 0.0);
            let eig = nalgebra::SymmetricEigen::new(*c);
            assert!(eig.eigenvalues.min() >= 1e-6 - 1e-12);
        }
    }

    fn stationary_imu(hz: f64, duration: f64) -> Vec<ImuMeasurement> {
        (0..(hz * duration) as usize)
            .map(|k| ImuMeasurement {
                stamp: k as f64 / hz,
                accel: Vector3::new(0.0, 0.0, 9.81),
                gyro: Vector3::zeros(),
            })
            .collect()
    }

    #[test]
    fn deskew_stationary_is_identity() {
        let g = GravityVector::standard();
        let points: Vec<Vector3<f64>> =
            (0..50).map(|i| Vector3::new(i as f64 * 0.1, 1.0, 0.5)).collect();
        let stamps: Vec<f64> = (0..50).map(|i| i as f64 * 0.002).collect();
        let scan = RawScan { stamp: 0.0, points: points.clone(), stamps };
        let anchor = SensorState::new(0.0, Pose::identity());
        let out = deskew(&scan, &stationary_imu(200.0, 0.2), &anchor, &g).unwrap();
        for (a, b) in out.points.iter().zip(&points) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn deskew_constant_yaw_matches_closed_form() {
        let g = GravityVector::standard();
        let omega = 0.8; // rad/s about z
        let hz = 1000.0;
        let imu: Vec<ImuMeasurement> = (0..((0.3 * hz) as usize))
            .map(|k| ImuMeasurement {
                stamp: k as f64 / hz,
                // Rotating frame: gravity stays along z for yaw-only motion.
                accel: Vector3::new(0.0, 0.0, 9.81),
                gyro: Vector3::new(0.0, 0.0, omega),
            })
            .collect();
        let p = Vector3::new(2.0, 0.0, 0.0);
        let t_mid = 0.05;
        let scan = RawScan { stamp: 0.0, points: vec![p], stamps: vec![t_mid] };
        let anchor = SensorState::new(0.0, Pose::identity());
        let out = deskew(&scan, &imu, &anchor, &g).unwrap();
        let expect = crate::geometry::exp_so3(&Vector3::new(0.0, 0.0, omega * t_mid)) * p;
        assert_relative_eq!(out.points[0], expect, epsilon = 1e-6);
    }

    #[test]
    fn deskew_equal_stamps_is_noop() {
        let g = GravityVector::standard();
        let scan = RawScan {
            stamp: 0.0,
            points: vec![Vector3::new(1.0, 2.0, 3.0)],
            stamps: vec![0.0],
        };
        let anchor = SensorState::new(0.0, Pose::identity());
        let out = deskew(&scan, &[], &anchor, &g).unwrap();
        assert_eq!(out.points, scan.points);
    }

    #[test]
    fn deskew_gap_detection() {
        let g = GravityVector::standard();
        let mut imu = stationary_imu(100.0, 0.3);
        // Remove a chunk in the middle of the sweep.
        imu.retain(|m| !(0.08..0.16).contains(&m.stamp));
        let stamps: Vec<f64> = (0..30).map(|i| i as f64 * 0.01).collect();
        let scan = RawScan {
            stamp: 0.0,
            points: vec![Vector3::new(1.0, 0.0, 0.0); 30],
            stamps,
        };
        let anchor = SensorState::new(0.0, Pose::identity());
        let err = deskew(&scan, &imu, &anchor, &g);
        assert!(matches!(err, Err(Error::ImuGap { .. })), "got {err:?}");
    }

    #[test]
    fn deskew_preserves_count_and_stamps() {
        let g = GravityVector::standard();
        let stamps: Vec<f64> = (0..40).map(|i| i as f64 * 0.0025).collect();
        let scan = RawScan {
            stamp: 0.0,
            points: (0..40).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect(),
            stamps: stamps.clone(),
        };
        let anchor = SensorState::new(0.0, Pose::identity());
        let out = deskew(&scan, &stationary_imu(200.0, 0.2), &anchor, &g).unwrap();
        assert_eq!(out.len(), 40);
        assert_eq!(out.stamps, stamps);
    }
}
