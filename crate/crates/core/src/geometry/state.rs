use nalgebra::{Vector3, Vector6};

use super::Pose;

/// Tangent-space element with rotation-first ordering `(omega, v)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist6 {
    pub rotational: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl Twist6 {
    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Self { rotational, translational }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rotational: Vector3::new(v[0], v[1], v[2]),
            translational: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rotational.x,
            self.rotational.y,
            self.rotational.z,
            self.translational.x,
            self.translational.y,
            self.translational.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.rotational.norm_squared() + self.translational.norm_squared()).sqrt()
    }
}

/// Sensor state at a timestamp: pose, velocity, and IMU biases.
#[derive(Clone, Copy, Debug)]
pub struct SensorState {
    /// Seconds.
    pub stamp: f64,
    pub pose: Pose,
    /// World-frame velocity, m/s.
    pub velocity: Vector3<f64>,
    /// Accelerometer bias, m/s^2.
    pub bias_accel: Vector3<f64>,
    /// Gyroscope bias, rad/s.
    pub bias_gyro: Vector3<f64>,
}

impl SensorState {
    pub fn new(stamp: f64, pose: Pose) -> Self {
        Self {
            stamp,
            pose,
            velocity: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
        }
    }

    /// Stacked bias vector `[bias_accel, bias_gyro]`.
    pub fn bias(&self) -> Vector6<f64> {
        Vector6::new(
            self.bias_accel.x,
            self.bias_accel.y,
            self.bias_accel.z,
            self.bias_gyro.x,
            self.bias_gyro.y,
            self.bias_gyro.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.stamp.is_finite()
            && self.pose.translation().iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.bias_accel.iter().all(|v| v.is_finite())
            && self.bias_gyro.iter().all(|v| v.is_finite())
    }
}
