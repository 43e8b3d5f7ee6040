//! Analytic ground-truth trajectories: hold / smooth-ramp / cruise speed
//! profiles on straight and ring paths, with closed-form pose and velocity.

use nalgebra::Vector3;

use crate::geometry::{exp_so3, Pose};

/// Closed-form trajectory: pose and world-frame linear velocity at any time.
pub trait TrajectoryModel: Send + Sync {
    fn pose(&self, t: f64) -> Pose;
    /// World-frame linear velocity.
    fn velocity(&self, t: f64) -> Vector3<f64>;
    fn duration(&self) -> f64;
    /// Time points where the velocity may be non-smooth.
    fn knots(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Scalar speed profile: rest, half-cosine ramp to `v`, cruise, mirrored
/// ramp down, rest. C1 in position.
#[derive(Clone, Debug)]
pub struct SpeedProfile {
    pub hold: f64,
    pub ramp: f64,
    pub cruise: f64,
    pub v_max: f64,
    pub tail: f64,
}

impl SpeedProfile {
    /// Profile covering `distance` meters at cruise speed `v_max`.
    pub fn for_distance(distance: f64, v_max: f64, hold: f64, ramp: f64, tail: f64) -> Self {
        let ramp_dist = v_max * ramp; // two ramps, each covering v*ramp/2
        let cruise = (distance - ramp_dist) / v_max;
        assert!(cruise >= 0.0, "distance too short for the ramps");
        Self { hold, ramp, cruise, v_max, tail }
    }

    pub fn duration(&self) -> f64 {
        self.hold + self.ramp + self.cruise + self.ramp + self.tail
    }

    pub fn speed(&self, t: f64) -> f64 {
        let t1 = self.hold;
        let t2 = t1 + self.ramp;
        let t3 = t2 + self.cruise;
        let t4 = t3 + self.ramp;
        if t < t1 {
            0.0
        } else if t < t2 {
            0.5 * self.v_max * (1.0 - ((t - t1) / self.ramp * std::f64::consts::PI).cos())
        } else if t < t3 {
            self.v_max
        } else if t < t4 {
            0.5 * self.v_max * (1.0 + ((t - t3) / self.ramp * std::f64::consts::PI).cos())
        } else {
            0.0
        }
    }

    /// Integrated path length at time `t` (closed form).
    pub fn distance(&self, t: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let t1 = self.hold;
        let t2 = t1 + self.ramp;
        let t3 = t2 + self.cruise;
        let t4 = t3 + self.ramp;
        let ramp_dist = 0.5 * self.v_max * self.ramp;
        if t < t1 {
            0.0
        } else if t < t2 {
            let u = t - t1;
            0.5 * self.v_max * (u - self.ramp / pi * (u / self.ramp * pi).sin())
        } else if t < t3 {
            ramp_dist + self.v_max * (t - t2)
        } else if t < t4 {
            let u = t - t3;
            ramp_dist
                + self.v_max * self.cruise
                + 0.5 * self.v_max * (u + self.ramp / pi * (u / self.ramp * pi).sin())
        } else {
            2.0 * ramp_dist + self.v_max * self.cruise
        }
    }
}

/// Straight corridor traverse along +x at fixed height, with a gentle
/// sinusoidal yaw rattle (enveloped by the speed ratio, so the sensor is
/// exactly still during the holds).
pub struct CorridorTrajectory {
    pub profile: SpeedProfile,
    pub start: Vector3<f64>,
    pub yaw_amplitude: f64,
    pub yaw_freq: f64,
}

impl CorridorTrajectory {
    pub fn new(start: Vector3<f64>, distance: f64, v_max: f64) -> Self {
        Self {
            profile: SpeedProfile::for_distance(distance, v_max, 2.0, 2.0, 1.0),
            start,
            yaw_amplitude: 5.0_f64.to_radians(),
            yaw_freq: 0.2,
        }
    }

    fn yaw(&self, t: f64) -> f64 {
        let env = self.profile.speed(t) / self.profile.v_max;
        self.yaw_amplitude * env * (2.0 * std::f64::consts::PI * self.yaw_freq * (t - self.profile.hold)).sin()
    }
}

impl TrajectoryModel for CorridorTrajectory {
    fn pose(&self, t: f64) -> Pose {
        let s = self.profile.distance(t);
        let pos = self.start + Vector3::new(s, 0.0, 0.0);
        Pose::new(exp_so3(&Vector3::new(0.0, 0.0, self.yaw(t))), pos)
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.profile.speed(t), 0.0, 0.0)
    }

    fn duration(&self) -> f64 {
        self.profile.duration()
    }
}

/// Square loop on a rounded-corner centerline (side length measured between
/// corner centers), traversed once at cruise speed.
pub struct SquareLoopTrajectory {
    pub profile: SpeedProfile,
    pub side: f64,
    pub corner_radius: f64,
    pub height: f64,
}

impl SquareLoopTrajectory {
    pub fn new(side: f64, corner_radius: f64, height: f64, v_max: f64) -> Self {
        let straight = side - 2.0 * corner_radius;
        let perimeter = 4.0 * straight + 2.0 * std::f64::consts::PI * corner_radius;
        Self {
            profile: SpeedProfile::for_distance(perimeter, v_max, 2.0, 2.0, 1.0),
            side,
            corner_radius,
            height,
        }
    }

    /// Position and heading along the rounded square at path length `s`.
    fn path(&self, s: f64) -> (Vector3<f64>, f64) {
        let r = self.corner_radius;
        let straight = self.side - 2.0 * r;
        let quarter = std::f64::consts::FRAC_PI_2 * r;
        let total = 4.0 * (straight + quarter);
        let s = s.rem_euclid(total);
        // Legs: +x along y=-h, quarter turn, +y along x=+h, ...
        let segs = [
            (straight, 0),
            (quarter, 1),
            (straight, 2),
            (quarter, 3),
            (straight, 4),
            (quarter, 5),
            (straight, 6),
            (quarter, 7),
        ];
        let mut rem = s;
        for (len, kind) in segs {
            if rem <= len {
                return self.segment_point(kind, rem);
            }
            rem -= len;
        }
        self.segment_point(0, 0.0)
    }

    fn segment_point(&self, kind: usize, u: f64) -> (Vector3<f64>, f64) {
        let h = self.side * 0.5;
        let r = self.corner_radius;
        let half_straight = (self.side - 2.0 * r) * 0.5;
        let pi = std::f64::consts::PI;
        match kind {
            // Straight legs start at the leg midpoint minus half length.
            0 => (Vector3::new(-half_straight + u, -h, self.height), 0.0),
            2 => (Vector3::new(h, -half_straight + u, self.height), pi * 0.5),
            4 => (Vector3::new(half_straight - u, h, self.height), pi),
            6 => (Vector3::new(-h, half_straight - u, self.height), -pi * 0.5),
            // Quarter arcs around the corner centers.
            kind => {
                let phi = u / r;
                let (center, phi0) = match kind {
                    1 => (Vector3::new(half_straight, -h + r, self.height), -pi * 0.5),
                    3 => (Vector3::new(h - r, half_straight, self.height), 0.0),
                    5 => (Vector3::new(-half_straight, h - r, self.height), pi * 0.5),
                    _ => (Vector3::new(-h + r, -half_straight, self.height), pi),
                };
                let ang = phi0 + phi;
                let pos = center + Vector3::new(ang.cos(), ang.sin(), 0.0) * r;
                (pos, ang + pi * 0.5)
            }
        }
    }
}

impl TrajectoryModel for SquareLoopTrajectory {
    fn pose(&self, t: f64) -> Pose {
        let (pos, heading) = self.path(self.profile.distance(t));
        Pose::new(exp_so3(&Vector3::new(0.0, 0.0, heading)), pos)
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        let (_, heading) = self.path(self.profile.distance(t));
        Vector3::new(heading.cos(), heading.sin(), 0.0) * self.profile.speed(t)
    }

    fn duration(&self) -> f64 {
        self.profile.duration()
    }

    fn knots(&self) -> Vec<f64> {
        // Acceleration jumps where straights meet arcs; velocity stays C0.
        Vec::new()
    }
}

/// Rest, then constant-rate yaw in place.
pub struct YawInPlaceTrajectory {
    pub position: Vector3<f64>,
    pub hold: f64,
    pub rate: f64,
    pub spin_duration: f64,
}

impl TrajectoryModel for YawInPlaceTrajectory {
    fn pose(&self, t: f64) -> Pose {
        let ramp = 1.0;
        let spin = |t: f64| -> f64 {
            // half-cosine rate ramp keeps the gyro signal continuous
            let u = (t - self.hold).clamp(0.0, self.spin_duration);
            if u < ramp {
                self.rate * 0.5 * (u - ramp / std::f64::consts::PI * (u / ramp * std::f64::consts::PI).sin())
            } else {
                self.rate * 0.5 * (ramp - ramp / std::f64::consts::PI * std::f64::consts::PI.sin())
                    + self.rate * (u - ramp)
            }
        };
        Pose::new(exp_so3(&Vector3::new(0.0, 0.0, spin(t))), self.position)
    }

    fn velocity(&self, _t: f64) -> Vector3<f64> {
        Vector3::zeros()
    }

    fn duration(&self) -> f64 {
        self.hold + self.spin_duration + 0.5
    }
}
