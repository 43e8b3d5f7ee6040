use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};

use super::so3::{exp_so3, left_jacobian, left_jacobian_inv, log_so3};
use super::state::Twist6;

/// Rigid transform in SE(3) stored as a unit quaternion and a translation.
///
/// The quaternion is renormalized after every composition to bound drift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::new_normalize(*rotation.quaternion()), translation }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_matrix(&rotation);
        Self { rotation: q, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self { rotation: rot_inv, translation: -(rot_inv * self.translation) }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Exponential map from a rotation-first twist.
    pub fn exp(xi: &Twist6) -> Self {
        let rotation = exp_so3(&xi.rotational);
        let translation = left_jacobian(&xi.rotational) * xi.translational;
        Self { rotation, translation }
    }

    /// Principal-branch logarithm; inverse of [`Pose::exp`] for rotation
    /// angles below pi.
    pub fn log(&self) -> Twist6 {
        let omega = log_so3(&self.rotation);
        let v = left_jacobian_inv(&omega) * self.translation;
        Twist6::new(omega, v)
    }

    /// Right-multiplicative retraction `T * exp(xi)`.
    pub fn retract(&self, xi: &Twist6) -> Self {
        *self * Pose::exp(xi)
    }

    /// Twist such that `self.retract(&t) == other`: `log(self^-1 * other)`.
    pub fn local(&self, other: &Pose) -> Twist6 {
        (self.inverse() * *other).log()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self^-1 * other`, radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.quaternion().coords.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose::new(self.rotation * rhs.rotation, self.rotation * rhs.translation + self.translation)
    }
}

/// Pose interpolation: constant-speed rotation geodesic with affine
/// translation blending `(1-alpha) t_l + alpha t_r`.
///
/// Antipodal rotations resolve to the shorter arc through the principal
/// logarithm of the relative rotation.
pub fn slerp_pose(left: &Pose, right: &Pose, alpha: f64) -> Pose {
    debug_assert!((0.0..=1.0).contains(&alpha), "alpha out of [0,1]");
    let rel = log_so3(&(left.rotation().inverse() * right.rotation()));
    let rotation = left.rotation() * exp_so3(&(rel * alpha));
    let translation = left.translation() * (1.0 - alpha) + right.translation() * alpha;
    Pose { rotation, translation }
}
