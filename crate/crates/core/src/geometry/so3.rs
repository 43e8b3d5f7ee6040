//! Rotation-group helpers: hat map, exp/log, Jacobians, and the integral
//! coefficient matrices used by constant-rate IMU propagation.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Angles below this use Taylor branches of the closed-form coefficients
/// (the closed forms lose precision to cancellation against 1.0 well before
/// the angle itself underflows).
const SMALL_ANGLE: f64 = 1e-3;

/// Hat map: 3-vector to skew-symmetric matrix.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation exponential.
#[inline]
pub fn exp_so3(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*omega)
}

/// Principal-branch rotation logarithm.
///
/// At angle pi the axis sign is chosen deterministically: the axis component
/// with the largest diagonal entry of R anchors the reconstruction and the
/// first nonzero component is made positive.
pub fn log_so3(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let r = q.to_rotation_matrix().into_inner();
    let trace = r.trace();
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    if theta < SMALL_ANGLE {
        // First-order: vee of the antisymmetric part.
        return Vector3::new(
            (r[(2, 1)] - r[(1, 2)]) * 0.5,
            (r[(0, 2)] - r[(2, 0)]) * 0.5,
            (r[(1, 0)] - r[(0, 1)]) * 0.5,
        );
    }

    if theta > std::f64::consts::PI - 1e-9 {
        // Near pi the antisymmetric part vanishes; rebuild the axis from
        // B = (R + I)/2 whose diagonal holds the squared axis components.
        let b = (r + Matrix3::identity()) * 0.5;
        let mut k = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(k, k)] {
                k = i;
            }
        }
        let mut axis = Vector3::zeros();
        axis[k] = b[(k, k)].max(0.0).sqrt();
        for i in 0..3 {
            if i != k {
                axis[i] = b[(i, k)] / axis[k];
            }
        }
        axis.normalize_mut();
        // Deterministic branch: first nonzero component positive.
        for i in 0..3 {
            if axis[i].abs() > 1e-12 {
                if axis[i] < 0.0 {
                    axis = -axis;
                }
                break;
            }
        }
        return axis * theta;
    }

    let factor = theta / (2.0 * theta.sin());
    Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) * factor,
        (r[(0, 2)] - r[(2, 0)]) * factor,
        (r[(1, 0)] - r[(0, 1)]) * factor,
    )
}

/// Left Jacobian of SO(3): integral of Exp(s*omega) over s in [0,1].
pub fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let a1 = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
        let a2 = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
        return Matrix3::identity() + w * a1 + w * w * a2;
    }
    let theta = theta2.sqrt();
    Matrix3::identity()
        + w * ((1.0 - theta.cos()) / theta2)
        + w * w * ((theta - theta.sin()) / (theta2 * theta))
}

/// Inverse of the left Jacobian.
pub fn left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let b2 = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
        return Matrix3::identity() - w * 0.5 + w * w * b2;
    }
    let theta = theta2.sqrt();
    let half = theta * 0.5;
    let cot = half.cos() / half.sin();
    Matrix3::identity() - w * 0.5 + w * w * ((1.0 - half * cot) / theta2)
}

/// Right Jacobian: `Jr(omega) = Jl(-omega)`.
#[inline]
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(&-omega)
}

/// Inverse of the right Jacobian.
#[inline]
pub fn right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian_inv(&-omega)
}

/// `integral of Exp(s*omega) ds over [0,dt]`, divided by dt: equals
/// `Jl(omega*dt)`. Kept as a named helper so the IMU propagation reads as the
/// velocity update of a constant-rate step.
#[inline]
pub fn velocity_integral(omega_dt: &Vector3<f64>) -> Matrix3<f64> {
    left_jacobian(omega_dt)
}

/// Double integral coefficient: `(1/dt^2) * int_0^dt int_0^u Exp(s*omega) ds du`
/// for constant body rate, i.e. the series `sum ohat^n / (n+2)!`.
pub fn velocity_double_integral(omega_dt: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega_dt.norm_squared();
    let w = skew(omega_dt);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let c1 = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
        let c2 = 1.0 / 24.0 - theta2 / 720.0 + theta2 * theta2 / 40320.0;
        return Matrix3::identity() * 0.5 + w * c1 + w * w * c2;
    }
    let theta = theta2.sqrt();
    let c1 = (theta - theta.sin()) / (theta2 * theta);
    let c2 = (theta.cos() - 1.0 + theta2 * 0.5) / (theta2 * theta2);
    Matrix3::identity() * 0.5 + w * c1 + w * w * c2
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadrature<F: Fn(f64) -> Matrix3<f64>>(f: F, n: usize) -> Matrix3<f64> {
        // Simpson's rule over [0,1].
        let h = 1.0 / n as f64;
        let mut acc = Matrix3::zeros();
        for i in 0..n {
            let a = i as f64 * h;
            acc += (f(a) + f(a + 0.5 * h) * 4.0 + f(a + h)) * (h / 6.0);
        }
        acc
    }

    #[test]
    fn log_of_exp_round_trip() {
        let cases = [
            Vector3::new(0.3, -0.2, 0.7),
            Vector3::new(1e-9, 0.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(-2.2, 1.1, 0.4),
        ];
        for omega in cases {
            let q = exp_so3(&omega);
            assert_relative_eq!(log_so3(&q), omega, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_at_pi_deterministic_branch() {
        let omega = Vector3::new(std::f64::consts::PI, 0.0, 0.0);
        let q = exp_so3(&omega);
        let back = log_so3(&q);
        assert_relative_eq!(back, omega, epsilon = 1e-6);

        // Axis with a negative leading component flips to the positive branch.
        let q2 = exp_so3(&Vector3::new(-std::f64::consts::PI, 0.0, 0.0));
        let back2 = log_so3(&q2);
        assert!(back2.x > 0.0);
    }

    #[test]
    fn left_jacobian_matches_quadrature() {
        let omega = Vector3::new(0.4, -1.1, 0.8);
        let num = quadrature(|s| exp_so3(&(omega * s)).to_rotation_matrix().into_inner(), 200);
        assert_relative_eq!(left_jacobian(&omega), num, epsilon = 1e-9);
        let inv = left_jacobian_inv(&omega);
        assert_relative_eq!(left_jacobian(&omega) * inv, Matrix3::identity(), epsilon = 1e-10);
    }

    #[test]
    fn double_integral_matches_quadrature() {
        let omega = Vector3::new(-0.3, 0.5, 0.9);
        let num = quadrature(
            |u| quadrature(|s| exp_so3(&(omega * s * u)).to_rotation_matrix().into_inner(), 50) * u,
            200,
        );
        // num = int_0^1 int_0^u Exp(s omega) ds du after substitution.
        assert_relative_eq!(velocity_double_integral(&omega), num, epsilon = 1e-7);
    }

    #[test]
    fn small_angle_branches_continuous() {
        // The Taylor branch agrees with the closed forms at the switch point.
        let theta: f64 = 0.999e-3; // routed to the Taylor branch
        let omega = Vector3::new(theta, 0.0, 0.0);
        let w = skew(&omega);
        let t2 = theta * theta;

        let jl_closed = Matrix3::identity()
            + w * ((1.0 - theta.cos()) / t2)
            + w * w * ((theta - theta.sin()) / (t2 * theta));
        assert_relative_eq!(left_jacobian(&omega), jl_closed, epsilon = 1e-12);

        let half = theta * 0.5;
        let jli_closed = Matrix3::identity() - w * 0.5
            + w * w * ((1.0 - half * (half.cos() / half.sin())) / t2);
        assert_relative_eq!(left_jacobian_inv(&omega), jli_closed, epsilon = 1e-12);

        let k_closed = Matrix3::identity() * 0.5
            + w * ((theta - theta.sin()) / (t2 * theta))
            + w * w * ((theta.cos() - 1.0 + t2 * 0.5) / (t2 * t2));
        assert_relative_eq!(velocity_double_integral(&omega), k_closed, epsilon = 1e-9);
    }
}
