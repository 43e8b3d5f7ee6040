//! Deterministic sensor simulation: plane-set worlds, analytic
//! trajectories, swept range scans, IMU synthesis, and scenario bundles.

mod scenario;
mod sensors;
mod trajectory;
mod world;

pub use scenario::{
    default_cameras, generate_corridor_scenario, generate_loop_scenario,
    generate_room_scenario, generate_rotation_scenario, inject_drift, DatasetBundle, Manifest,
    NOISE_LEVELS,
};
pub use sensors::{
    simulate_scan, synthesize_imu, synthesize_observations, ImuSynthesis, LidarModel, NoiseSpec,
};
pub use trajectory::{
    CorridorTrajectory, SpeedProfile, SquareLoopTrajectory, TrajectoryModel, YawInPlaceTrajectory,
};
pub use world::{Rect, WorldModel};
