//! Range-scan generation and integrator-consistent IMU synthesis.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::RawScan;
use crate::geometry::{left_jacobian, log_so3};
use crate::imu::{GravityVector, ImuMeasurement};
use crate::visual::{CameraModel, LandmarkObservation};

use super::trajectory::TrajectoryModel;
use super::world::WorldModel;

/// Spinning range sensor: `rings` beams swept over azimuth during `sweep`.
#[derive(Clone, Debug)]
pub struct LidarModel {
    pub rings: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_step: f64,
    pub sweep: f64,
    pub max_range: f64,
    pub range_noise: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            rings: 16,
            elevation_min: -15.0_f64.to_radians(),
            elevation_max: 15.0_f64.to_radians(),
            azimuth_step: 0.4_f64.to_radians(),
            sweep: 0.1,
            max_range: 15.0,
            range_noise: 0.01,
        }
    }
}

/// Casts one sweep starting at `stamp`. Each azimuth column is cast from the
/// sensor pose at its own firing time, so sweeps genuinely smear under
/// motion; points beyond `max_range` are dropped.
pub fn simulate_scan(
    world: &WorldModel,
    traj: &dyn TrajectoryModel,
    stamp: f64,
    model: &LidarModel,
    rng: &mut ChaCha12Rng,
) -> RawScan {
    let mut scan = RawScan::new(stamp);
    let columns = (2.0 * std::f64::consts::PI / model.azimuth_step).round() as usize;
    for col in 0..columns {
        let frac = col as f64 / columns as f64;
        let t = stamp + frac * model.sweep;
        let pose = traj.pose(t);
        let origin = pose.translation();
        let azimuth = frac * 2.0 * std::f64::consts::PI;
        for ring in 0..model.rings {
            let elev = model.elevation_min
                + (model.elevation_max - model.elevation_min)
                    * (ring as f64 / (model.rings - 1).max(1) as f64);
            let dir_sensor = Vector3::new(
                elev.cos() * azimuth.cos(),
                elev.cos() * azimuth.sin(),
                elev.sin(),
            );
            let dir_world = pose.rotate(&dir_sensor);
            if let Some(range) = world.raycast(&origin, &dir_world, model.max_range) {
                let noise: f64 = StandardNormal.sample(rng);
                let r = range + noise * model.range_noise;
                scan.points.push(dir_sensor * r);
                scan.stamps.push(t);
            }
        }
    }
    scan
}

/// Noise model of the synthetic IMU. Sigmas are per-sample standard
/// deviations; bias random walks are per-sqrt-second densities. Seeded runs
/// are bit-reproducible.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    /// m/s^2 per sample.
    pub accel_noise: f64,
    /// deg/s per sample.
    pub gyro_noise_deg: f64,
    /// m/s^2 / sqrt(s).
    pub accel_bias_rw: f64,
    /// deg/s / sqrt(s).
    pub gyro_bias_rw_deg: f64,
    /// Std of the true initial accelerometer bias draw, m/s^2.
    pub init_accel_bias: f64,
    /// Std of the true initial gyro bias draw, deg/s.
    pub init_gyro_bias_deg: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// The corridor-protocol noise ladder: one scalar level drives both the
    /// accelerometer (m/s^2) and gyro (deg/s) sigmas.
    pub fn from_level(level: f64, seed: u64) -> Self {
        Self {
            accel_noise: level,
            gyro_noise_deg: level,
            accel_bias_rw: 0.1 * level,
            gyro_bias_rw_deg: 0.1 * level,
            init_accel_bias: 0.5 * level,
            init_gyro_bias_deg: 0.5 * level,
            seed,
        }
    }

    pub fn noiseless(seed: u64) -> Self {
        Self {
            accel_noise: 0.0,
            gyro_noise_deg: 0.0,
            accel_bias_rw: 0.0,
            gyro_bias_rw_deg: 0.0,
            init_accel_bias: 0.0,
            init_gyro_bias_deg: 0.0,
            seed,
        }
    }
}

/// Synthesized IMU stream plus the indices of measurements whose holding
/// interval contains a trajectory knot (one-sided derivative).
pub struct ImuSynthesis {
    pub stream: Vec<ImuMeasurement>,
    pub flagged: Vec<usize>,
    /// True biases at each sample (for diagnostics).
    pub accel_bias: Vec<Vector3<f64>>,
    pub gyro_bias: Vec<Vector3<f64>>,
}

/// Synthesizes body-frame rate measurements from the analytic trajectory.
///
/// The gyro sample over `[t_k, t_{k+1}]` is the exact average body rate
/// `log(R_k^T R_{k+1}) / dt` and the accelerometer sample solves the exact
/// piecewise-constant velocity update, so noiseless streams dead-reckon back
/// to the trajectory with only the position quadrature error of O(dt^2).
pub fn synthesize_imu(
    traj: &dyn TrajectoryModel,
    noise: &NoiseSpec,
    gravity: &GravityVector,
    rate: f64,
) -> ImuSynthesis {
    let dt = 1.0 / rate;
    let n = (traj.duration() * rate).floor() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed ^ 0x9e3779b97f4a7c15);
    let gauss = |sigma: f64, rng: &mut ChaCha12Rng| -> Vector3<f64> {
        let s: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        Vector3::new(s[0], s[1], s[2]) * sigma
    };

    let mut ba = gauss(noise.init_accel_bias, &mut rng);
    let mut bg = gauss(noise.init_gyro_bias_deg.to_radians(), &mut rng);
    let knots = traj.knots();

    let mut out = ImuSynthesis {
        stream: Vec::with_capacity(n),
        flagged: Vec::new(),
        accel_bias: Vec::with_capacity(n),
        gyro_bias: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = k as f64 * dt;
        let pose_a = traj.pose(t);
        let pose_b = traj.pose(t + dt);
        let omega = log_so3(&(pose_a.rotation().inverse() * pose_b.rotation())) / dt;
        let dv = (traj.velocity(t + dt) - traj.velocity(t)) / dt;
        let body_acc = pose_a.rotation_matrix().transpose() * (dv - gravity.0);
        // Invert the exact constant-rate velocity update so integration
        // reproduces v(t_{k+1}) bit-for-bit in the noiseless case.
        let j1 = left_jacobian(&(omega * dt));
        let accel_exact = j1.try_inverse().unwrap_or_else(nalgebra::Matrix3::identity) * body_acc;

        let accel = accel_exact + ba + gauss(noise.accel_noise, &mut rng);
        let gyro = omega + bg + gauss(noise.gyro_noise_deg.to_radians(), &mut rng);
        out.stream.push(ImuMeasurement { stamp: t, accel, gyro });
        out.accel_bias.push(ba);
        out.gyro_bias.push(bg);
        if knots.iter().any(|&kt| kt > t && kt <= t + dt) {
            out.flagged.push(k);
        }

        let sqrt_dt = dt.sqrt();
        ba += gauss(noise.accel_bias_rw * sqrt_dt, &mut rng);
        bg += gauss(noise.gyro_bias_rw_deg.to_radians() * sqrt_dt, &mut rng);
    }
    out
}

/// Projects world landmarks into each camera at the given stamps, with
/// pixel noise and a configurable outlier fraction.
pub fn synthesize_observations(
    world: &WorldModel,
    traj: &dyn TrajectoryModel,
    cameras: &[CameraModel],
    stamps: &[f64],
    pixel_noise: f64,
    outlier_rate: f64,
    seed: u64,
) -> Vec<LandmarkObservation> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x517c_c1b7_2722_0a95);
    let mut out = Vec::new();
    for &t in stamps {
        let pose = traj.pose(t);
        for (cam_id, cam) in cameras.iter().enumerate() {
            for (feature_id, lm) in &world.landmarks {
                let p_cam = cam.world_to_camera(&pose, lm);
                let Some(mut pix) = cam.project(&p_cam) else { continue };
                if p_cam.z > 12.0 {
                    continue; // beyond useful feature range
                }
                let n: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
                pix += Vector2::new(n[0], n[1]) * pixel_noise;
                if outlier_rate > 0.0 && rng.random_range(0.0..1.0) < outlier_rate {
                    pix = Vector2::new(
                        rng.random_range(0.0..cam.width),
                        rng.random_range(0.0..cam.height),
                    );
                }
                if cam.in_bounds(&pix) {
                    out.push(LandmarkObservation {
                        stamp: t,
                        camera_id: cam_id as u32,
                        feature_id: *feature_id,
                        pixel: pix,
                    });
                }
            }
        }
    }
    out
}
