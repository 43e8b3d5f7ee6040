//! SE(3)/SO(3) primitives, state containers, and pose interpolation.
//!
//! Tangent-space ordering is rotation-first `(omega, v)` everywhere; the
//! matching-factor Jacobians and the optimizer retraction follow the same
//! convention.

mod pose;
mod so3;
mod state;

pub use pose::{slerp_pose, Pose};
pub use so3::{
    exp_so3, left_jacobian, left_jacobian_inv, log_so3, right_jacobian, right_jacobian_inv, skew,
    velocity_integral, velocity_double_integral,
};
pub use state::{SensorState, Twist6};
