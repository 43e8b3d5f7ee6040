//! IMU state evolution, preintegrated deltas between stamps, the
//! preintegration residual, and dead-reckoned motion prediction.
//!
//! Integration applies each measurement as a constant body rate over its
//! holding interval and propagates rotation/velocity/position with the exact
//! constant-rate solution, so noiseless constant-rate streams reproduce the
//! closed-form twist integrals to machine precision.

use nalgebra::{Matrix3, SMatrix, UnitQuaternion, Vector3, Vector6};

use crate::geometry::{
    exp_so3, right_jacobian, skew, velocity_double_integral, velocity_integral, SensorState,
};
use crate::{Error, Result};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SMatrix<f64, 9, 1>;

/// One IMU sample: specific force and angular velocity in the sensor frame.
#[derive(Clone, Copy, Debug)]
pub struct ImuMeasurement {
    pub stamp: f64,
    /// m/s^2.
    pub accel: Vector3<f64>,
    /// rad/s.
    pub gyro: Vector3<f64>,
}

/// World-frame gravity vector.
#[derive(Clone, Copy, Debug)]
pub struct GravityVector(pub Vector3<f64>);

impl GravityVector {
    pub fn standard() -> Self {
        Self(Vector3::new(0.0, 0.0, -9.81))
    }
}

impl Default for GravityVector {
    fn default() -> Self {
        Self::standard()
    }
}

/// Per-sample measurement noise used for covariance propagation.
#[derive(Clone, Copy, Debug)]
pub struct ImuNoise {
    /// Accelerometer std per sample, m/s^2.
    pub accel_std: f64,
    /// Gyro std per sample, rad/s.
    pub gyro_std: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self { accel_std: 1e-2, gyro_std: 1e-3 }
    }
}

/// Relative body motion accumulated between two stamps, expressed in the
/// frame of the start state with gravity removed.
#[derive(Clone, Debug)]
pub struct PreintegratedImuDelta {
    pub rotation: UnitQuaternion<f64>,
    /// Position delta, m.
    pub translation: Vector3<f64>,
    /// Velocity delta, m/s.
    pub velocity: Vector3<f64>,
    /// Integration time, s.
    pub duration: f64,
    /// Bias `[accel, gyro]` the delta was integrated with.
    pub bias_lin: Vector6<f64>,
    /// Propagated measurement-noise covariance, rows `(rot, pos, vel)`.
    pub noise_cov: Matrix9,
}

impl PreintegratedImuDelta {
    pub fn identity(bias: Vector6<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            velocity: Vector3::zeros(),
            duration: 0.0,
            bias_lin: bias,
            noise_cov: Matrix9::zeros(),
        }
    }

    /// Advance by one constant-rate step of corrected measurements.
    fn step(&mut self, accel: Vector3<f64>, gyro: Vector3<f64>, dt: f64, noise: &ImuNoise) {
        let omega_dt = gyro * dt;
        let rot = self.rotation.to_rotation_matrix().into_inner();
        let j1 = velocity_integral(&omega_dt);
        let j2 = velocity_double_integral(&omega_dt);

        // First-order error-state propagation for the noise covariance.
        let dr_step = exp_so3(&omega_dt).to_rotation_matrix().into_inner();
        let a_skew = rot * skew(&accel);
        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&dr_step.transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-a_skew * (0.5 * dt * dt)));
        a.fixed_view_mut::<3, 3>(3, 6).copy_from(&(Matrix3::identity() * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-a_skew * dt));

        let jr = right_jacobian(&omega_dt);
        let mut b = SMatrix::<f64, 9, 6>::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rot * (0.5 * dt * dt)));
        b.fixed_view_mut::<3, 3>(6, 3).copy_from(&(rot * dt));
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        q.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * noise.gyro_std * noise.gyro_std));
        q.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * noise.accel_std * noise.accel_std));
        self.noise_cov = a * self.noise_cov * a.transpose() + b * q * b.transpose();

        self.translation += self.velocity * dt + rot * (j2 * accel) * (dt * dt);
        self.velocity += rot * (j1 * accel) * dt;
        self.rotation *= exp_so3(&omega_dt);
        self.duration += dt;
    }

    /// Composition over adjoining intervals: `[a,b] then [b,c]` equals the
    /// integral over `[a,c]`.
    pub fn compose(&self, later: &PreintegratedImuDelta) -> PreintegratedImuDelta {
        let rot = self.rotation.to_rotation_matrix().into_inner();
        PreintegratedImuDelta {
            rotation: self.rotation * later.rotation,
            translation: self.translation
                + self.velocity * later.duration
                + rot * later.translation,
            velocity: self.velocity + rot * later.velocity,
            duration: self.duration + later.duration,
            bias_lin: self.bias_lin,
            noise_cov: self.noise_cov + later.noise_cov,
        }
    }
}

fn corrected(m: &ImuMeasurement, bias: &Vector6<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let ba = Vector3::new(bias[0], bias[1], bias[2]);
    let bg = Vector3::new(bias[3], bias[4], bias[5]);
    (m.accel - ba, m.gyro - bg)
}

/// Bias-corrected integration of `stream` over `[t_start, t_end]`.
///
/// Each measurement holds from its stamp to the next one; the boundary
/// measurements are clipped (or extended) to the interval ends.
pub fn integrate(
    stream: &[ImuMeasurement],
    t_start: f64,
    t_end: f64,
    bias: Vector6<f64>,
    noise: &ImuNoise,
) -> Result<PreintegratedImuDelta> {
    if stream.is_empty() {
        return Err(Error::ImuCoverage(t_start, t_end));
    }
    if t_end < t_start {
        return Err(Error::InvalidInput(format!("integrate: t_end {t_end} < t_start {t_start}")));
    }
    for pair in stream.windows(2) {
        if pair[1].stamp <= pair[0].stamp {
            return Err(Error::ImuOutOfOrder(pair[1].stamp));
        }
    }

    let mut delta = PreintegratedImuDelta::identity(bias);
    for (k, m) in stream.iter().enumerate() {
        let hold_start = if k == 0 { t_start.min(m.stamp) } else { m.stamp };
        let hold_end = if k + 1 < stream.len() { stream[k + 1].stamp } else { t_end.max(m.stamp) };
        let s = hold_start.max(t_start);
        let e = hold_end.min(t_end);
        if e <= s {
            continue;
        }
        let (accel, gyro) = corrected(m, &bias);
        delta.step(accel, gyro, e - s, noise);
    }
    Ok(delta)
}

/// Preintegration residual `(rot, pos, vel)` of Eq.-style form: zero when
/// `x_j` equals the forward propagation of `x_i` under the same bias.
pub fn residual(
    delta: &PreintegratedImuDelta,
    x_i: &SensorState,
    x_j: &SensorState,
    gravity: &GravityVector,
) -> Vector9 {
    let dt = delta.duration;
    let r_i = x_i.pose.rotation_matrix();
    let r_i_t = r_i.transpose();
    let g = gravity.0;

    let rot_err = crate::geometry::log_so3(
        &(delta.rotation.inverse() * x_i.pose.rotation().inverse() * x_j.pose.rotation()),
    );
    let pos_err = delta.translation
        - r_i_t
            * (x_j.pose.translation()
                - x_i.pose.translation()
                - x_i.velocity * dt
                - g * (0.5 * dt * dt));
    let vel_err = delta.velocity - r_i_t * (x_j.velocity - x_i.velocity - g * dt);

    let mut r = Vector9::zeros();
    r.fixed_view_mut::<3, 1>(0, 0).copy_from(&rot_err);
    r.fixed_view_mut::<3, 1>(3, 0).copy_from(&pos_err);
    r.fixed_view_mut::<3, 1>(6, 0).copy_from(&vel_err);
    r
}

/// Analytic residual Jacobians with respect to the poses (right-multiplied
/// twists, rotation-first) and world-frame velocities.
///
/// Returns `(d/d xi_i, d/d v_i, d/d xi_j, d/d v_j)` with residual rows
/// `(rot, pos, vel)`.
pub fn residual_jacobians(
    delta: &PreintegratedImuDelta,
    x_i: &SensorState,
    x_j: &SensorState,
    gravity: &GravityVector,
) -> (SMatrix<f64, 9, 6>, SMatrix<f64, 9, 3>, SMatrix<f64, 9, 6>, SMatrix<f64, 9, 3>) {
    let dt = delta.duration;
    let r_i_t = x_i.pose.rotation_matrix().transpose();
    let r_j = x_j.pose.rotation_matrix();
    let g = gravity.0;
    let r = residual(delta, x_i, x_j, gravity);
    let rot_err = Vector3::new(r[0], r[1], r[2]);

    let jr_inv = crate::geometry::right_jacobian_inv(&rot_err);
    let jl_inv = crate::geometry::left_jacobian_inv(&rot_err);
    let dr_t = delta.rotation.to_rotation_matrix().into_inner().transpose();

    let s = x_j.pose.translation() - x_i.pose.translation() - x_i.velocity * dt - g * (0.5 * dt * dt);
    let u = x_j.velocity - x_i.velocity - g * dt;

    let mut d_xi_i = SMatrix::<f64, 9, 6>::zeros();
    d_xi_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jl_inv * dr_t));
    d_xi_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(&(r_i_t * s))));
    d_xi_i.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
    d_xi_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-skew(&(r_i_t * u))));

    let mut d_v_i = SMatrix::<f64, 9, 3>::zeros();
    d_v_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r_i_t * dt));
    d_v_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&r_i_t);

    let mut d_xi_j = SMatrix::<f64, 9, 6>::zeros();
    d_xi_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    d_xi_j.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r_i_t * r_j));

    let mut d_v_j = SMatrix::<f64, 9, 3>::zeros();
    d_v_j.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-r_i_t));

    (d_xi_i, d_v_i, d_xi_j, d_v_j)
}

/// Dead-reckoned state trajectory at IMU rate starting from `x_i`, using the
/// biases held in `x_i`. Returns `x_i` alone for an empty stream.
pub fn predict(
    x_i: &SensorState,
    stream: &[ImuMeasurement],
    gravity: &GravityVector,
) -> Vec<SensorState> {
    let mut out = Vec::with_capacity(stream.len() + 1);
    out.push(*x_i);
    if stream.is_empty() {
        return out;
    }
    // The last sample holds for one nominal period.
    let nominal = if stream.len() >= 2 {
        let mut diffs: Vec<f64> = stream.windows(2).map(|w| w[1].stamp - w[0].stamp).collect();
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        diffs[diffs.len() / 2]
    } else {
        0.0
    };
    let bias = x_i.bias();
    let g = gravity.0;
    let mut cur = *x_i;
    for (k, m) in stream.iter().enumerate() {
        let hold_start = if k == 0 { x_i.stamp.min(m.stamp) } else { m.stamp };
        let hold_end =
            if k + 1 < stream.len() { stream[k + 1].stamp } else { m.stamp + nominal };
        let s = hold_start.max(x_i.stamp);
        let e = hold_end.max(s);
        let dt = e - s;
        if dt <= 0.0 && k + 1 < stream.len() {
            continue;
        }
        let (accel, gyro) = corrected(m, &bias);
        let omega_dt = gyro * dt;
        let rot = cur.pose.rotation_matrix();
        let j1 = velocity_integral(&omega_dt);
        let j2 = velocity_double_integral(&omega_dt);
        let translation = cur.pose.translation()
            + cur.velocity * dt
            + g * (0.5 * dt * dt)
            + rot * (j2 * accel) * (dt * dt);
        let velocity = cur.velocity + g * dt + rot * (j1 * accel) * dt;
        let rotation = cur.pose.rotation() * exp_so3(&omega_dt);
        cur = SensorState {
            stamp: e,
            pose: crate::geometry::Pose::new(rotation, translation),
            velocity,
            bias_accel: cur.bias_accel,
            bias_gyro: cur.bias_gyro,
        };
        out.push(cur);
    }
    out
}

/// Measurements relevant to `[t0, t1]`: every sample stamped inside, plus the
/// one immediately before `t0` so the leading interval is covered.
pub fn slice_between(stream: &[ImuMeasurement], t0: f64, t1: f64) -> &[ImuMeasurement] {
    let start = stream.partition_point(|m| m.stamp <= t0).saturating_sub(1);
    let end = stream.partition_point(|m| m.stamp < t1);
    &stream[start..end.max(start)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use approx::assert_relative_eq;

    fn constant_stream(accel: Vector3<f64>, gyro: Vector3<f64>, hz: f64, duration: f64) -> Vec<ImuMeasurement> {
        let n = (duration * hz).round() as usize;
        (0..n)
            .map(|k| ImuMeasurement { stamp: k as f64 / hz, accel, gyro })
            .collect()
    }

    #[test]
    fn zero_rate_stream_yields_identity_delta() {
        let stream = constant_stream(Vector3::zeros(), Vector3::zeros(), 100.0, 1.0);
        let d = integrate(&stream, 0.0, 1.0, Vector6::zeros(), &ImuNoise::default()).unwrap();
        assert!(d.rotation.angle() < 1e-15);
        assert_relative_eq!(d.velocity, Vector3::zeros());
        assert_relative_eq!(d.translation, Vector3::zeros());
        assert_relative_eq!(d.duration, 1.0);
    }

    #[test]
    fn constant_gyro_matches_closed_form() {
        let omega = Vector3::new(0.0, 0.0, 0.7);
        let accel = Vector3::new(0.3, -0.1, 0.2);
        let dt_total = 1.5;
        let stream = constant_stream(accel, omega, 100.0, dt_total);
        let d = integrate(&stream, 0.0, dt_total, Vector6::zeros(), &ImuNoise::default()).unwrap();

        // Closed-form constant-twist integrals.
        let theta = omega * dt_total;
        assert!(d.rotation.angle_to(&exp_so3(&theta)) < 1e-12);
        let v_expect = velocity_integral(&theta) * accel * dt_total;
        assert_relative_eq!(d.velocity, v_expect, epsilon = 1e-9);
        let p_expect = velocity_double_integral(&theta) * accel * dt_total * dt_total;
        assert_relative_eq!(d.translation, p_expect, epsilon = 1e-9);
    }

    #[test]
    fn composition_over_adjoining_intervals() {
        let omega = Vector3::new(0.2, -0.4, 0.5);
        let accel = Vector3::new(1.0, 0.5, -0.3);
        let stream = constant_stream(accel, omega, 200.0, 2.0);
        let noise = ImuNoise::default();
        let whole = integrate(&stream, 0.0, 2.0, Vector6::zeros(), &noise).unwrap();
        let first = integrate(&stream, 0.0, 0.8, Vector6::zeros(), &noise).unwrap();
        let second = integrate(&stream, 0.8, 2.0, Vector6::zeros(), &noise).unwrap();
        let composed = first.compose(&second);
        assert!(composed.rotation.angle_to(&whole.rotation) < 1e-9);
        assert_relative_eq!(composed.velocity, whole.velocity, epsilon = 1e-9);
        assert_relative_eq!(composed.translation, whole.translation, epsilon = 1e-9);
        assert_relative_eq!(composed.duration, whole.duration, epsilon = 1e-12);
    }

    #[test]
    fn step_size_convergence_on_smooth_signal() {
        // Same analytic signal sampled at 100 Hz and 10 kHz. Samples are
        // interval-representative (taken at the midpoint of each holding
        // interval, as a rate sensor integrating over the sample period
        // reports), so piecewise-constant integration converges at O(dt^2).
        let sample = |hz: f64| -> Vec<ImuMeasurement> {
            let n = (hz as usize) * 1;
            (0..n)
                .map(|k| {
                    let t = k as f64 / hz;
                    let tm = t + 0.5 / hz;
                    ImuMeasurement {
                        stamp: t,
                        accel: Vector3::new((2.0 * tm).sin(), (1.3 * tm).cos(), 0.2),
                        gyro: Vector3::new(0.1 * (3.0 * tm).cos(), -0.2, 0.3 * (1.7 * tm).sin()),
                    }
                })
                .collect()
        };
        let noise = ImuNoise::default();
        let coarse = integrate(&sample(100.0), 0.0, 1.0, Vector6::zeros(), &noise).unwrap();
        let fine = integrate(&sample(10_000.0), 0.0, 1.0, Vector6::zeros(), &noise).unwrap();
        assert!(coarse.rotation.angle_to(&fine.rotation) < 1e-4);
        assert!((coarse.velocity - fine.velocity).norm() < 1e-4);
        assert!((coarse.translation - fine.translation).norm() < 1e-4);
    }

    #[test]
    fn out_of_order_stamps_error() {
        let mut stream = constant_stream(Vector3::zeros(), Vector3::zeros(), 100.0, 0.5);
        stream[3].stamp = stream[2].stamp - 0.001;
        let err = integrate(&stream, 0.0, 0.5, Vector6::zeros(), &ImuNoise::default());
        assert!(matches!(err, Err(Error::ImuOutOfOrder(_))));
    }

    #[test]
    fn residual_zero_for_propagated_state() {
        let g = GravityVector::standard();
        let omega = Vector3::new(0.1, 0.2, -0.3);
        // Specific force: the sensor measures a - R^T g for world accel a.
        let stream: Vec<ImuMeasurement> = constant_stream(Vector3::new(0.5, 0.0, 9.81), omega, 400.0, 1.0);
        let x_i = SensorState::new(0.0, Pose::identity());
        let states = predict(&x_i, &stream, &g);
        let x_j = *states.last().unwrap();
        let d = integrate(&stream, 0.0, x_j.stamp, Vector6::zeros(), &ImuNoise::default()).unwrap();
        let r = residual(&d, &x_i, &x_j, &g);
        assert!(r.norm() < 1e-9, "residual {r}");
    }

    #[test]
    fn residual_translation_perturbation_is_linear() {
        let g = GravityVector::standard();
        let stream = constant_stream(Vector3::new(0.0, 0.0, 9.81), Vector3::zeros(), 100.0, 0.5);
        let x_i = SensorState::new(0.0, Pose::identity());
        let states = predict(&x_i, &stream, &g);
        let mut x_j = *states.last().unwrap();
        let d = integrate(&stream, 0.0, x_j.stamp, Vector6::zeros(), &ImuNoise::default()).unwrap();
        let r0 = residual(&d, &x_i, &x_j, &g);
        x_j.pose = Pose::new(x_j.pose.rotation(), x_j.pose.translation() + Vector3::new(0.1, 0.0, 0.0));
        let r1 = residual(&d, &x_i, &x_j, &g);
        // R_i = I: the position rows move by exactly -(0.1, 0, 0).
        assert_relative_eq!(r1[3] - r0[3], -0.1, epsilon = 1e-12);
        assert_relative_eq!(r1[4] - r0[4], 0.0, epsilon = 1e-12);
        assert_relative_eq!(r1[5] - r0[5], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_matches_independent_formula() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(77);
        let g = GravityVector::standard();
        for _ in 0..50 {
            let rand_vec = |rng: &mut StdRng, s: f64| {
                Vector3::new(
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                    rng.random_range(-s..s),
                )
            };
            let stream = constant_stream(rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 0.5), 100.0, 0.7);
            let d = integrate(&stream, 0.0, 0.7, Vector6::zeros(), &ImuNoise::default()).unwrap();
            let mk_state = |rng: &mut StdRng, stamp: f64| SensorState {
                stamp,
                pose: Pose::new(exp_so3(&rand_vec(rng, 1.0)), rand_vec(rng, 3.0)),
                velocity: rand_vec(rng, 1.5),
                bias_accel: Vector3::zeros(),
                bias_gyro: Vector3::zeros(),
            };
            let x_i = mk_state(&mut rng, 0.0);
            let x_j = mk_state(&mut rng, 0.7);
            let r = residual(&d, &x_i, &x_j, &g);

            // Independent evaluation working on rotation matrices directly.
            let ri = x_i.pose.rotation_matrix();
            let rj = x_j.pose.rotation_matrix();
            let dr = d.rotation.to_rotation_matrix().into_inner();
            let m = dr.transpose() * ri.transpose() * rj;
            let angle = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos();
            let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
                * (0.5 / angle.sin().max(1e-300) * angle);
            let dt = 0.7;
            let want_p = d.translation
                - ri.transpose()
                    * (x_j.pose.translation() - x_i.pose.translation() - x_i.velocity * dt
                        - g.0 * 0.5 * dt * dt);
            let want_v = d.velocity - ri.transpose() * (x_j.velocity - x_i.velocity - g.0 * dt);
            assert_relative_eq!(Vector3::new(r[0], r[1], r[2]), axis, epsilon = 1e-9);
            assert_relative_eq!(Vector3::new(r[3], r[4], r[5]), want_p, epsilon = 1e-9);
            assert_relative_eq!(Vector3::new(r[6], r[7], r[8]), want_v, epsilon = 1e-9);
        }
    }

    #[test]
    fn predict_stationary_state_constant() {
        let g = GravityVector::standard();
        // Stationary: accel cancels gravity in the body frame with R = I.
        let stream = constant_stream(Vector3::new(0.0, 0.0, 9.81), Vector3::zeros(), 200.0, 3.0);
        let x0 = SensorState::new(0.0, Pose::identity());
        let states = predict(&x0, &stream, &g);
        for s in &states {
            assert!(s.velocity.norm() < 1e-9);
            assert!(s.pose.translation().norm() < 1e-9);
        }
    }

    #[test]
    fn predict_free_fall_kinematics() {
        let g = GravityVector::standard();
        let stream = constant_stream(Vector3::zeros(), Vector3::zeros(), 1000.0, 1.0);
        let x0 = SensorState::new(0.0, Pose::identity());
        let states = predict(&x0, &stream, &g);
        let last = states.last().unwrap();
        assert_relative_eq!(last.velocity, g.0, epsilon = 1e-9);
        assert_relative_eq!(last.pose.translation(), g.0 * 0.5, epsilon = 1e-9);
    }

    #[test]
    fn predict_empty_stream_returns_start() {
        let x0 = SensorState::new(1.0, Pose::identity());
        let states = predict(&x0, &[], &GravityVector::standard());
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].stamp, 1.0);
    }

    #[test]
    fn gravity_cancellation_long_horizon() {
        let g = GravityVector::standard();
        let stream = constant_stream(Vector3::new(0.0, 0.0, 9.81), Vector3::zeros(), 100.0, 30.0);
        let x0 = SensorState::new(0.0, Pose::identity());
        let states = predict(&x0, &stream, &g);
        assert!(states.last().unwrap().velocity.norm() < 1e-9);
    }
}
