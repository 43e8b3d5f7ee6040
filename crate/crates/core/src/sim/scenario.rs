//! Ready-made simulation scenarios bundling scans, IMU, ground truth, and
//! synthetic visual observations.

use nalgebra::{Matrix3, Vector3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::cloud::RawScan;
use crate::geometry::{Pose, SensorState, Twist6};
use crate::imu::{GravityVector, ImuMeasurement};
use crate::visual::{CameraModel, LandmarkObservation};

use super::sensors::{simulate_scan, synthesize_imu, synthesize_observations, LidarModel, NoiseSpec};
use super::trajectory::{CorridorTrajectory, SquareLoopTrajectory, TrajectoryModel, YawInPlaceTrajectory};
use super::world::WorldModel;

/// The corridor-protocol IMU noise ladder.
pub const NOISE_LEVELS: [f64; 5] = [1e-3, 5e-3, 1e-2, 5e-2, 1e-1];

/// Key/value manifest recorded with every generated dataset.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// A complete in-memory dataset.
pub struct DatasetBundle {
    pub scans: Vec<RawScan>,
    pub imu: Vec<ImuMeasurement>,
    /// Ground-truth states at scan stamps.
    pub ground_truth: Vec<SensorState>,
    pub observations: Vec<LandmarkObservation>,
    pub cameras: Vec<CameraModel>,
    pub gravity: GravityVector,
    pub manifest: Manifest,
}

fn ground_truth_states(traj: &dyn TrajectoryModel, stamps: &[f64]) -> Vec<SensorState> {
    stamps
        .iter()
        .map(|&t| SensorState {
            stamp: t,
            pose: traj.pose(t),
            velocity: traj.velocity(t),
            bias_accel: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
        })
        .collect()
}

/// Forward-looking stereo-ish pair: optical axis along body +x, slight
/// lateral offsets.
pub fn default_cameras() -> Vec<CameraModel> {
    // Camera axes: optical z forward (body x), x right (body -y), y down (body -z).
    let r = Matrix3::from_columns(&[
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(1.0, 0.0, 0.0),
    ]);
    [-0.1, 0.1]
        .into_iter()
        .map(|dy| CameraModel {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            extrinsic: Pose::from_parts(r, Vector3::new(0.05, dy, 0.0)),
            width: 640.0,
            height: 480.0,
        })
        .collect()
}

fn generate(
    world: WorldModel,
    traj: &dyn TrajectoryModel,
    noise: NoiseSpec,
    lidar: LidarModel,
    scan_hz: f64,
    imu_hz: f64,
    name: &str,
) -> DatasetBundle {
    let gravity = GravityVector::standard();
    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
    let n_scans = ((traj.duration() - lidar.sweep) * scan_hz).floor() as usize;
    let stamps: Vec<f64> = (0..n_scans).map(|k| k as f64 / scan_hz).collect();
    let scans: Vec<RawScan> =
        stamps.iter().map(|&t| simulate_scan(&world, traj, t, &lidar, &mut rng)).collect();
    let synth = synthesize_imu(traj, &noise, &gravity, imu_hz);
    let cameras = default_cameras();
    let observations =
        synthesize_observations(&world, traj, &cameras, &stamps, 0.5, 0.0, noise.seed);

    let mut manifest = Manifest::default();
    manifest.push("scenario", name);
    manifest.push("seed", noise.seed);
    manifest.push("scan_hz", scan_hz);
    manifest.push("imu_hz", imu_hz);
    manifest.push("max_range", lidar.max_range);
    manifest.push("accel_noise", noise.accel_noise);
    manifest.push("gyro_noise_deg", noise.gyro_noise_deg);
    manifest.push("accel_bias_rw", noise.accel_bias_rw);
    manifest.push("gyro_bias_rw_deg", noise.gyro_bias_rw_deg);

    DatasetBundle {
        ground_truth: ground_truth_states(traj, &stamps),
        scans,
        imu: synth.stream,
        observations,
        cameras,
        gravity,
        manifest,
    }
}

/// The corridor degeneration protocol: 40 m corridor, 15 m range cap, the
/// sensor traverses at 1 m/s with a gentle yaw rattle after a 2 s rest.
/// `noise_level` indexes [`NOISE_LEVELS`].
pub fn generate_corridor_scenario(noise_level: usize, seed: u64) -> DatasetBundle {
    let level = NOISE_LEVELS[noise_level];
    let world = WorldModel::corridor(40.0, 4.0, 3.0);
    let traj = CorridorTrajectory::new(Vector3::new(2.0, 0.0, 1.5), 36.0, 1.0);
    let mut bundle = generate(
        world,
        &traj,
        NoiseSpec::from_level(level, seed),
        LidarModel::default(),
        10.0,
        200.0,
        "corridor",
    );
    bundle.manifest.push("noise_level", level);
    bundle
}

/// Square ring loop (centerline side 20 m) inside a walled courtyard.
pub fn generate_loop_scenario(noise_level: usize, seed: u64) -> DatasetBundle {
    let level = NOISE_LEVELS[noise_level];
    let world = WorldModel::square_ring(26.0, 14.0, 3.0);
    let traj = SquareLoopTrajectory::new(20.0, 2.0, 1.5, 1.0);
    let mut bundle = generate(
        world,
        &traj,
        NoiseSpec::from_level(level, seed),
        LidarModel::default(),
        10.0,
        200.0,
        "loop",
    );
    bundle.manifest.push("noise_level", level);
    bundle
}

/// In-place rotation in a cluttered room (odometry stress test).
pub fn generate_rotation_scenario(rate_deg: f64, seed: u64) -> DatasetBundle {
    let world = WorldModel::box_room(10.0, 10.0, 4.0);
    let traj = YawInPlaceTrajectory {
        position: Vector3::new(0.0, 0.0, 1.5),
        hold: 2.0,
        rate: rate_deg.to_radians(),
        spin_duration: 8.0,
    };
    generate(
        world,
        &traj,
        NoiseSpec::from_level(NOISE_LEVELS[0], seed),
        LidarModel::default(),
        10.0,
        200.0,
        "rotation",
    )
}

/// Slow traverse of a cluttered room with a denser-than-default ray pattern
/// (about 10k returns per frame); used by the throughput benchmark.
pub fn generate_room_scenario(seed: u64, duration_hint: f64) -> DatasetBundle {
    let world = WorldModel::box_room(12.0, 12.0, 4.0);
    let distance = (duration_hint - 5.0).max(2.0) * 0.5;
    let traj = CorridorTrajectory::new(Vector3::new(-distance * 0.5, 0.0, 1.5), distance, 0.5);
    let lidar = LidarModel {
        rings: 24,
        azimuth_step: 0.7_f64.to_radians(),
        ..LidarModel::default()
    };
    generate(
        world,
        &traj,
        NoiseSpec::from_level(NOISE_LEVELS[0], seed),
        lidar,
        10.0,
        200.0,
        "room",
    )
}

/// Re-plays the trajectory through a drifting "odometry": each step's true
/// relative motion is composed with a small per-meter error twist, so
/// heading errors compound the way integrated odometry drift does. At
/// `drift_per_meter = 0.01` the final position error lands near 1% of the
/// path length.
pub fn inject_drift(states: &[SensorState], drift_per_meter: f64) -> Vec<SensorState> {
    let mut out: Vec<SensorState> = Vec::with_capacity(states.len());
    let per_meter = Twist6::new(
        Vector3::new(0.0, 0.0, 0.02 * drift_per_meter),
        Vector3::new(0.4, 0.8, 0.3) * drift_per_meter,
    );
    for (i, s) in states.iter().enumerate() {
        if i == 0 {
            out.push(*s);
            continue;
        }
        let prev_true = &states[i - 1];
        let step = (prev_true.pose.translation() - s.pose.translation()).norm();
        let rel = prev_true.pose.inverse() * s.pose;
        let err = Pose::exp(&Twist6::new(
            per_meter.rotational * step,
            per_meter.translational * step,
        ));
        let pose = out[i - 1].pose * rel * err;
        // Velocity error follows the accumulated attitude error.
        let rot_err = pose.rotation() * s.pose.rotation().inverse();
        out.push(SensorState {
            stamp: s.stamp,
            pose,
            velocity: rot_err * s.velocity,
            bias_accel: s.bias_accel,
            bias_gyro: s.bias_gyro,
        });
    }
    out
}
