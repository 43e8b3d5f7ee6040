//! Multi-camera visual constraints: interpolated visual-keyframe pose ties,
//! Huber-robustified pinhole projection, and midpoint triangulation.
//!
//! Feature tracking is out of scope; observations arrive from the simulator
//! as `(stamp, camera_id, feature_id, pixel)` records.

use nalgebra::{Vector2, Vector3, Vector6};

use crate::geometry::{slerp_pose, Pose};

/// Pinhole camera with a constant IMU-to-camera extrinsic.
#[derive(Clone, Copy, Debug)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera pose expressed in the IMU frame.
    pub extrinsic: Pose,
    pub width: f64,
    pub height: f64,
}

impl CameraModel {
    /// Projects a camera-frame point; `None` for non-positive depth.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 1e-9 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// World point into the camera frame given the IMU pose.
    pub fn world_to_camera(&self, imu_pose: &Pose, p_world: &Vector3<f64>) -> Vector3<f64> {
        (*imu_pose * self.extrinsic).inverse().transform(p_world)
    }

    pub fn in_bounds(&self, pix: &Vector2<f64>) -> bool {
        pix.x >= 0.0 && pix.x < self.width && pix.y >= 0.0 && pix.y < self.height
    }
}

/// A single 2D feature observation.
#[derive(Clone, Copy, Debug)]
pub struct LandmarkObservation {
    pub stamp: f64,
    pub camera_id: u32,
    pub feature_id: u64,
    pub pixel: Vector2<f64>,
}

/// Discrepancy between a visual keyframe pose and the interpolation of its
/// bracketing states: `log(C^-1 * interp(T_L, T_R, alpha))`.
pub fn visual_keyframe_residual(c_t: &Pose, t_l: &Pose, t_r: &Pose, alpha: f64) -> Vector6<f64> {
    let target = slerp_pose(t_l, t_r, alpha);
    (c_t.inverse() * target).log().as_vector()
}

/// Pinhole projection residual `obs - project(world point)`; `None` when the
/// landmark falls behind the camera (factor deactivated for the iteration).
pub fn projection_residual(
    imu_pose: &Pose,
    landmark: &Vector3<f64>,
    cam: &CameraModel,
    obs: &Vector2<f64>,
) -> Option<Vector2<f64>> {
    let p_cam = cam.world_to_camera(imu_pose, landmark);
    cam.project(&p_cam).map(|pix| obs - pix)
}

/// Huber weight for a residual of norm `e`: 1 inside the delta, `delta/e`
/// outside.
pub fn huber_weight(e: f64, delta: f64) -> f64 {
    if e <= delta {
        1.0
    } else {
        delta / e
    }
}

/// Huber cost of a squared-norm `e2` residual.
pub fn huber_cost(e2: f64, delta: f64) -> f64 {
    let e = e2.sqrt();
    if e <= delta {
        e2
    } else {
        delta * (2.0 * e - delta)
    }
}

/// Midpoint triangulation of a feature from two IMU poses.
///
/// Returns `None` for a degenerate baseline (< `min_baseline`) or nearly
/// parallel rays (< `min_angle` radians).
pub fn triangulate(
    obs_a: &Vector2<f64>,
    pose_a: &Pose,
    obs_b: &Vector2<f64>,
    pose_b: &Pose,
    cam: &CameraModel,
    min_baseline: f64,
    min_angle: f64,
) -> Option<Vector3<f64>> {
    let cam_a = *pose_a * cam.extrinsic;
    let cam_b = *pose_b * cam.extrinsic;
    let origin_a = cam_a.translation();
    let origin_b = cam_b.translation();
    if (origin_a - origin_b).norm() < min_baseline {
        return None;
    }
    let dir = |cam_pose: &Pose, obs: &Vector2<f64>| {
        let ray = Vector3::new((obs.x - cam.cx) / cam.fx, (obs.y - cam.cy) / cam.fy, 1.0);
        cam_pose.rotate(&ray.normalize())
    };
    let da = dir(&cam_a, obs_a);
    let db = dir(&cam_b, obs_b);
    if da.cross(&db).norm() < min_angle {
        return None;
    }

    // Closest points on the two rays; the landmark is their midpoint.
    let w = origin_a - origin_b;
    let (aa, bb, ab) = (da.dot(&da), db.dot(&db), da.dot(&db));
    let (ad, bd) = (da.dot(&w), db.dot(&w));
    let denom = aa * bb - ab * ab;
    let s = (ab * bd - bb * ad) / denom;
    let t = (aa * bd - ab * ad) / denom;
    let pa = origin_a + da * s;
    let pb = origin_b + db * t;
    if s < 0.0 || t < 0.0 {
        return None;
    }
    Some((pa + pb) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn camera() -> CameraModel {
        CameraModel {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            extrinsic: Pose::identity(),
            width: 640.0,
            height: 480.0,
        }
    }

    #[test]
    fn keyframe_residual_zero_at_interpolated_pose() {
        let t_l = Pose::identity();
        let t_r = Pose::new(
            exp_so3(&Vector3::new(0.0, 0.0, 0.6)),
            Vector3::new(1.0, 0.0, 0.0),
        );
        let c = slerp_pose(&t_l, &t_r, 0.4);
        let r = visual_keyframe_residual(&c, &t_l, &t_r, 0.4);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn keyframe_residual_midpoint_yaw() {
        let t_l = Pose::identity();
        let t_r = Pose::new(exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)), Vector3::zeros());
        let c = Pose::identity();
        let r = visual_keyframe_residual(&c, &t_l, &t_r, 0.5);
        let rot = Vector3::new(r[0], r[1], r[2]);
        assert_relative_eq!(rot.norm(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn keyframe_residual_zero_iff_interpolation() {
        let mut rng = StdRng::seed_from_u64(40);
        for _ in 0..100 {
            let rv = |rng: &mut StdRng, s: f64| {
                Vector3::new(
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                )
            };
            let t_l = Pose::new(exp_so3(&rv(&mut rng, 1.5)), rv(&mut rng, 2.0));
            let t_r = Pose::new(exp_so3(&rv(&mut rng, 1.5)), rv(&mut rng, 2.0));
            let alpha = rng.random_range(0.05..0.95);
            let exact = slerp_pose(&t_l, &t_r, alpha);
            assert!(visual_keyframe_residual(&exact, &t_l, &t_r, alpha).norm() < 1e-9);
            let off = Pose::new(exact.rotation(), exact.translation() + Vector3::new(0.01, 0.0, 0.0));
            assert!(visual_keyframe_residual(&off, &t_l, &t_r, alpha).norm() > 1e-4);
        }
    }

    #[test]
    fn projection_exact_observation_zero_residual() {
        let cam = camera();
        let pose = Pose::from_translation(Vector3::new(0.3, -0.2, 0.1));
        let landmark = Vector3::new(0.8, 0.1, 2.5);
        let p_cam = cam.world_to_camera(&pose, &landmark);
        let obs = cam.project(&p_cam).unwrap();
        let r = projection_residual(&pose, &landmark, &cam, &obs).unwrap();
        assert!(r.norm() < 1e-12);
        assert_eq!(huber_weight(r.norm(), 1.0), 1.0);
    }

    #[test]
    fn projection_on_axis_hits_principal_point() {
        let cam = camera();
        let obs = Vector2::new(cam.cx, cam.cy);
        let landmark = Vector3::new(0.0, 0.0, 3.0);
        let r = projection_residual(&Pose::identity(), &landmark, &cam, &obs).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn projection_behind_camera_deactivates() {
        let cam = camera();
        let landmark = Vector3::new(0.0, 0.0, -1.0);
        assert!(projection_residual(&Pose::identity(), &landmark, &cam, &Vector2::zeros()).is_none());
    }

    #[test]
    fn projection_matches_independent_pinhole() {
        let cam = camera();
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..100 {
            let pose = Pose::new(
                exp_so3(&Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                )),
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let landmark = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..6.0),
            );
            let Some(r) = projection_residual(&pose, &landmark, &cam, &Vector2::new(100.0, 200.0))
            else {
                continue;
            };
            // Independent: rotation matrix arithmetic without Pose helpers.
            let rot = pose.rotation_matrix();
            let p_imu = rot.transpose() * (landmark - pose.translation());
            // extrinsic is identity here.
            let want = Vector2::new(
                100.0 - (cam.fx * p_imu.x / p_imu.z + cam.cx),
                200.0 - (cam.fy * p_imu.y / p_imu.z + cam.cy),
            );
            assert_relative_eq!(r, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn triangulate_recovers_noiseless_landmark() {
        let cam = camera();
        let landmark = Vector3::new(0.5, -0.3, 4.0);
        let pose_a = Pose::identity();
        let pose_b = Pose::from_translation(Vector3::new(0.6, 0.0, 0.0));
        let obs_a = cam.project(&cam.world_to_camera(&pose_a, &landmark)).unwrap();
        let obs_b = cam.project(&cam.world_to_camera(&pose_b, &landmark)).unwrap();
        let got = triangulate(&obs_a, &pose_a, &obs_b, &pose_b, &cam, 1e-3, 1e-6).unwrap();
        assert_relative_eq!(got, landmark, epsilon = 1e-6);
    }

    #[test]
    fn triangulate_rejects_parallel_rays() {
        let cam = camera();
        let obs = Vector2::new(400.0, 300.0);
        let pose_a = Pose::identity();
        // Pure forward motion along the ray direction keeps rays parallel.
        let ray = Vector3::new((obs.x - cam.cx) / cam.fx, (obs.y - cam.cy) / cam.fy, 1.0).normalize();
        let pose_b = Pose::from_translation(ray * 1e-9);
        assert!(triangulate(&obs, &pose_a, &obs, &pose_b, &cam, 1e-3, 1e-6).is_none());
    }

    #[test]
    fn triangulation_noise_bounded_by_depth_uncertainty() {
        // 1-pixel observation noise at 2 m depth with 0.5 m baseline: the
        // first-order depth uncertainty is sigma_z = z^2 / (f * b) * sigma_px.
        let cam = camera();
        let landmark = Vector3::new(0.0, 0.0, 2.0);
        let pose_a = Pose::from_translation(Vector3::new(-0.25, 0.0, 0.0));
        let pose_b = Pose::from_translation(Vector3::new(0.25, 0.0, 0.0));
        let sigma_px = 1.0;
        let sigma_z = 2.0 * 2.0 / (cam.fx * 0.5) * sigma_px;

        let mut rng = StdRng::seed_from_u64(500);
        let mut sq = 0.0;
        let n = 2000;
        for _ in 0..n {
            let mut noisy = |pose: &Pose| {
                let exact = cam.project(&cam.world_to_camera(pose, &landmark)).unwrap();
                let jitter = Vector2::new(
                    rng.random_range(-1.0..1.0) * sigma_px * 1.732,
                    rng.random_range(-1.0..1.0) * sigma_px * 1.732,
                );
                exact + jitter
            };
            let oa = noisy(&pose_a);
            let ob = noisy(&pose_b);
            if let Some(p) = triangulate(&oa, &pose_a, &ob, &pose_b, &cam, 1e-3, 1e-6) {
                sq += (p.z - landmark.z) * (p.z - landmark.z);
            }
        }
        let rms = (sq / n as f64).sqrt();
        assert!(rms < 3.0 * sigma_z, "rms {rms} vs 3x depth bound {}", 3.0 * sigma_z);
        assert!(rms > sigma_z / 3.0, "rms {rms} implausibly small vs {sigma_z}");
    }
}
