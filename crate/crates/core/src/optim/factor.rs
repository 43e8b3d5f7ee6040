//! Heterogeneous factors of the estimation graphs and their linearization
//! into gradient/Hessian blocks.
//!
//! Every factor contributes `r^T W r` to the total cost; linearization
//! produces the gradient halves `b_k = J_k^T W r` and information blocks
//! `H_kl = J_k^T W J_l` over its keys. The linear model of the cost around
//! the linearization point is `c + 2 b^T delta + delta^T H delta`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SMatrix, Vector2, Vector3, Vector6};

use crate::cloud::GaussianPointCloud;
use crate::geometry::{Pose, SensorState};
use crate::imu::{
    integrate, residual as imu_residual, residual_jacobians, GravityVector, ImuMeasurement,
    ImuNoise, Matrix9, PreintegratedImuDelta,
};
use crate::matching::{self, MatchingConfig};
use crate::visual::{huber_cost, huber_weight, projection_residual, visual_keyframe_residual, CameraModel};
use crate::voxelmap::MultiResolutionVoxelMap;
use crate::{Error, Result};

use super::key::VariableKey;
use super::values::{Value, Values};

/// Immutable per-frame matching inputs shared by factors.
pub struct FrameData {
    pub cloud: GaussianPointCloud,
    pub maps: MultiResolutionVoxelMap,
}

/// Target pose of a matching factor: a graph variable, or a constant for
/// already-marginalized keyframes.
#[derive(Clone, Copy, Debug)]
pub enum PoseTarget {
    Variable(VariableKey),
    Fixed(Pose),
}

/// Diagonal, scalar, or full information weighting of a residual.
#[derive(Clone, Debug)]
pub enum Weight {
    Scalar(f64),
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Weight {
    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            Weight::Scalar(w) => r * *w,
            Weight::Diagonal(d) => r.component_mul(d),
            Weight::Full(m) => m * r,
        }
    }

    fn quad(&self, r: &DVector<f64>) -> f64 {
        r.dot(&self.apply(r))
    }
}

/// Diagonal information from per-row sigmas.
pub fn info_from_sigmas(sigmas: &[f64]) -> Weight {
    Weight::Diagonal(DVector::from_iterator(
        sigmas.len(),
        sigmas.iter().map(|s| 1.0 / (s * s)),
    ))
}

/// Linearized contribution of one factor.
#[derive(Clone, Debug)]
pub struct LinearizedFactor {
    pub keys: Vec<VariableKey>,
    /// `b_k` per key.
    pub grads: Vec<DVector<f64>>,
    /// Upper-triangle blocks `H_{keys[a], keys[b]}` for `a <= b`.
    pub hessians: Vec<((usize, usize), DMatrix<f64>)>,
    pub cost: f64,
}

impl LinearizedFactor {
    pub fn zero(keys: Vec<VariableKey>) -> Self {
        let grads = keys.iter().map(|k| DVector::zeros(k.dim())).collect();
        Self { keys, grads, hessians: Vec::new(), cost: 0.0 }
    }

    fn from_residual(
        keys: Vec<VariableKey>,
        jacobians: Vec<DMatrix<f64>>,
        weight: &Weight,
        r: &DVector<f64>,
    ) -> Self {
        let wr = weight.apply(r);
        let cost = r.dot(&wr);
        let grads = jacobians.iter().map(|j| j.transpose() * &wr).collect();
        let mut hessians = Vec::new();
        for a in 0..keys.len() {
            let wja = match weight {
                Weight::Scalar(w) => &jacobians[a] * *w,
                Weight::Diagonal(d) => DMatrix::from_fn(r.len(), keys[a].dim(), |i, c| {
                    jacobians[a][(i, c)] * d[i]
                }),
                Weight::Full(m) => m * &jacobians[a],
            };
            for b in a..keys.len() {
                hessians.push(((a, b), wja.transpose() * &jacobians[b]));
            }
        }
        Self { keys, grads, hessians, cost }
    }

    /// Quadratic-model cost after moving each key by `delta_k` from the
    /// linearization point.
    pub fn model_cost(&self, deltas: &[DVector<f64>]) -> f64 {
        let mut c = self.cost;
        for (g, d) in self.grads.iter().zip(deltas) {
            c += 2.0 * g.dot(d);
        }
        for ((a, b), h) in &self.hessians {
            let q = deltas[*a].transpose() * h * &deltas[*b];
            c += if a == b { q[(0, 0)] } else { 2.0 * q[(0, 0)] };
        }
        c
    }

    /// First-order re-centering of the quadratic model at a new point
    /// displaced by `delta_k` per key.
    pub fn shifted(&self, deltas: &[DVector<f64>]) -> Self {
        let mut grads = self.grads.clone();
        for ((a, b), h) in &self.hessians {
            grads[*a] += h * &deltas[*b];
            if a != b {
                grads[*b] += h.transpose() * &deltas[*a];
            }
        }
        Self {
            keys: self.keys.clone(),
            grads,
            hessians: self.hessians.clone(),
            cost: self.model_cost(deltas),
        }
    }
}

/// Central-difference Jacobians of a residual over the factor's variables.
fn numeric_linearized(
    keys: Vec<VariableKey>,
    values: &Values,
    weight: &Weight,
    residual_fn: &dyn Fn(&[Value]) -> DVector<f64>,
) -> Result<LinearizedFactor> {
    let vars: Vec<Value> = keys
        .iter()
        .map(|k| values.get(k).cloned().ok_or(Error::MissingValue(*k)))
        .collect::<Result<_>>()?;
    let r = residual_fn(&vars);
    let h = 1e-7;
    let mut jacobians = Vec::with_capacity(keys.len());
    for (ki, key) in keys.iter().enumerate() {
        let dim = key.dim();
        let mut jac = DMatrix::zeros(r.len(), dim);
        let mut probe = vars.clone();
        for axis in 0..dim {
            let mut delta = vec![0.0; dim];
            delta[axis] = h;
            probe[ki] = vars[ki].retract(&delta);
            let rp = residual_fn(&probe);
            delta[axis] = -h;
            probe[ki] = vars[ki].retract(&delta);
            let rm = residual_fn(&probe);
            probe[ki] = vars[ki].clone();
            jac.set_column(axis, &((rp - rm) / (2.0 * h)));
        }
        jacobians.push(jac);
    }
    Ok(LinearizedFactor::from_residual(keys, jacobians, weight, &r))
}

/// VGICP matching-cost factor between a source cloud and a target voxelmap.
pub struct MatchingFactor {
    pub source_key: VariableKey,
    pub target: PoseTarget,
    pub source_data: Arc<FrameData>,
    pub target_data: Arc<FrameData>,
    pub config: MatchingConfig,
}

impl MatchingFactor {
    pub fn keys(&self) -> Vec<VariableKey> {
        match self.target {
            PoseTarget::Variable(k) => vec![self.source_key, k],
            PoseTarget::Fixed(_) => vec![self.source_key],
        }
    }

    pub fn poses(&self, values: &Values) -> Result<(Pose, Pose)> {
        let src = values
            .get(&self.source_key)
            .ok_or(Error::MissingValue(self.source_key))?
            .as_pose();
        let tgt = match self.target {
            PoseTarget::Variable(k) => {
                values.get(&k).ok_or(Error::MissingValue(k))?.as_pose()
            }
            PoseTarget::Fixed(p) => p,
        };
        Ok((src, tgt))
    }

    pub fn cost(&self, values: &Values) -> Result<f64> {
        let (src, tgt) = self.poses(values)?;
        Ok(matching::matching_cost(&self.source_data.cloud, &self.target_data.maps, &src, &tgt, &self.config).0)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let (src, tgt) = self.poses(values)?;
        let lq = matching::linearize(
            &self.source_data.cloud,
            &self.target_data.maps,
            &src,
            &tgt,
            &self.config,
        );
        Ok(self.blocks_from(lq))
    }

    /// Converts the fixed-size linear-quadratic form into padded key blocks
    /// (the pose twist occupies the first six tangent rows of a state).
    pub fn blocks_from(&self, lq: matching::LinearQuadraticFactor) -> LinearizedFactor {
        let keys = self.keys();
        let mut grads: Vec<DVector<f64>> = keys.iter().map(|k| DVector::zeros(k.dim())).collect();
        let mut hessians = Vec::new();

        let embed_vec = |g: &mut DVector<f64>, b: &Vector6<f64>| {
            for i in 0..6 {
                g[i] += b[i];
            }
        };
        embed_vec(&mut grads[0], &lq.b_i);
        let d0 = keys[0].dim();
        let mut h00 = DMatrix::zeros(d0, d0);
        h00.view_mut((0, 0), (6, 6)).copy_from(&lq.h_ii);
        hessians.push(((0, 0), h00));
        if keys.len() == 2 {
            embed_vec(&mut grads[1], &lq.b_j);
            let d1 = keys[1].dim();
            let mut h01 = DMatrix::zeros(d0, d1);
            h01.view_mut((0, 0), (6, 6)).copy_from(&lq.h_ij);
            hessians.push(((0, 1), h01));
            let mut h11 = DMatrix::zeros(d1, d1);
            h11.view_mut((0, 0), (6, 6)).copy_from(&lq.h_jj);
            hessians.push(((1, 1), h11));
        }
        LinearizedFactor { keys, grads, hessians, cost: lq.cost }
    }
}

/// Preintegrated IMU factor with first-order bias correction; the delta is
/// re-integrated from the stored stream when the bias estimate drifts past
/// `rebias_threshold`.
pub struct ImuFactor {
    pub key_i: VariableKey,
    pub key_j: VariableKey,
    stream: Arc<Vec<ImuMeasurement>>,
    t_i: f64,
    t_j: f64,
    noise: ImuNoise,
    gravity: GravityVector,
    delta: PreintegratedImuDelta,
    bias_jac: SMatrix<f64, 9, 6>,
    info: Matrix9,
    rebias_threshold: f64,
}

impl ImuFactor {
    pub fn new(
        key_i: VariableKey,
        key_j: VariableKey,
        stream: Arc<Vec<ImuMeasurement>>,
        t_i: f64,
        t_j: f64,
        bias: Vector6<f64>,
        noise: ImuNoise,
        gravity: GravityVector,
    ) -> Result<Self> {
        let delta = integrate(&stream, t_i, t_j, bias, &noise)?;
        let info = info_from_cov(&delta.noise_cov);
        let mut factor = Self {
            key_i,
            key_j,
            stream,
            t_i,
            t_j,
            noise,
            gravity,
            delta,
            bias_jac: SMatrix::zeros(),
            info,
            rebias_threshold: 1e-3,
        };
        factor.bias_jac = factor.numeric_bias_jacobian()?;
        Ok(factor)
    }

    pub fn delta(&self) -> &PreintegratedImuDelta {
        &self.delta
    }

    /// d(residual)/d(bias_i) by re-integration, evaluated against neutral
    /// states (the residual is linear in the delta terms, so the states at
    /// which this is taken only matter through the rotation-log Jacobian,
    /// a second-order effect under the first-order bias model).
    fn numeric_bias_jacobian(&self) -> Result<SMatrix<f64, 9, 6>> {
        let h = 1e-5;
        let x_i = SensorState::new(self.t_i, Pose::identity());
        let mut x_j = SensorState::new(self.t_j, Pose::identity());
        // Evaluate around the propagated state so the rotation log stays on
        // the principal branch.
        x_j.pose = Pose::new(self.delta.rotation, self.delta.translation);
        x_j.velocity = self.delta.velocity;
        let g0 = GravityVector(Vector3::zeros());
        let mut jac = SMatrix::<f64, 9, 6>::zeros();
        for axis in 0..6 {
            let mut bp = self.delta.bias_lin;
            bp[axis] += h;
            let dp = integrate(&self.stream, self.t_i, self.t_j, bp, &self.noise)?;
            let mut bm = self.delta.bias_lin;
            bm[axis] -= h;
            let dm = integrate(&self.stream, self.t_i, self.t_j, bm, &self.noise)?;
            let rp = imu_residual(&dp, &x_i, &x_j, &g0);
            let rm = imu_residual(&dm, &x_i, &x_j, &g0);
            jac.set_column(axis, &((rp - rm) / (2.0 * h)));
        }
        Ok(jac)
    }

    /// Re-integrates when the current bias has drifted from the
    /// linearization bias.
    pub fn refresh(&mut self, values: &Values) -> Result<()> {
        let bias = values.state(&self.key_i).bias();
        if (bias - self.delta.bias_lin).amax() > self.rebias_threshold {
            self.delta = integrate(&self.stream, self.t_i, self.t_j, bias, &self.noise)?;
            self.info = info_from_cov(&self.delta.noise_cov);
            self.bias_jac = self.numeric_bias_jacobian()?;
        }
        Ok(())
    }

    fn corrected_residual(&self, x_i: &SensorState, x_j: &SensorState) -> Vector9 {
        let r = imu_residual(&self.delta, x_i, x_j, &self.gravity);
        r + self.bias_jac * (x_i.bias() - self.delta.bias_lin)
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.corrected_residual(values.state(&self.key_i), values.state(&self.key_j));
        (r.transpose() * self.info * r)[(0, 0)]
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let x_i = values.state(&self.key_i);
        let x_j = values.state(&self.key_j);
        let r = self.corrected_residual(x_i, x_j);
        let (d_xi_i, d_v_i, d_xi_j, d_v_j) =
            residual_jacobians(&self.delta, x_i, x_j, &self.gravity);

        let mut j_i = DMatrix::zeros(9, 15);
        j_i.view_mut((0, 0), (9, 6)).copy_from(&d_xi_i);
        j_i.view_mut((0, 6), (9, 3)).copy_from(&d_v_i);
        j_i.view_mut((0, 9), (9, 6)).copy_from(&self.bias_jac);
        let mut j_j = DMatrix::zeros(9, 15);
        j_j.view_mut((0, 0), (9, 6)).copy_from(&d_xi_j);
        j_j.view_mut((0, 6), (9, 3)).copy_from(&d_v_j);

        let weight = Weight::Full(DMatrix::from_fn(9, 9, |i, j| self.info[(i, j)]));
        Ok(LinearizedFactor::from_residual(
            vec![self.key_i, self.key_j],
            vec![j_i, j_j],
            &weight,
            &DVector::from_column_slice(r.as_slice()),
        ))
    }
}

type Vector9 = SMatrix<f64, 9, 1>;

fn info_from_cov(cov: &Matrix9) -> Matrix9 {
    let jitter = Matrix9::identity() * 1e-12;
    (cov + jitter).try_inverse().unwrap_or_else(|| {
        // Extremely short intervals can round to singular; fall back to a
        // strong diagonal weight.
        Matrix9::identity() * 1e12
    })
}

/// Bias random walk between consecutive states.
pub struct BiasWalkFactor {
    pub key_i: VariableKey,
    pub key_j: VariableKey,
    pub sigma: f64,
}

impl BiasWalkFactor {
    fn residual(&self, values: &Values) -> DVector<f64> {
        let bi = values.state(&self.key_i).bias();
        let bj = values.state(&self.key_j).bias();
        DVector::from_column_slice((bj - bi).as_slice())
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual(values);
        r.norm_squared() / (self.sigma * self.sigma)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let r = self.residual(values);
        let mut j_i = DMatrix::zeros(6, 15);
        j_i.view_mut((0, 9), (6, 6)).copy_from(&(-DMatrix::identity(6, 6)));
        let mut j_j = DMatrix::zeros(6, 15);
        j_j.view_mut((0, 9), (6, 6)).copy_from(&DMatrix::identity(6, 6));
        Ok(LinearizedFactor::from_residual(
            vec![self.key_i, self.key_j],
            vec![j_i, j_j],
            &Weight::Scalar(1.0 / (self.sigma * self.sigma)),
            &r,
        ))
    }
}

/// Prior anchoring a full state.
pub struct StatePriorFactor {
    pub key: VariableKey,
    pub prior: SensorState,
    /// Sigmas: rotation, translation, velocity, bias.
    pub sigmas: [f64; 4],
}

impl StatePriorFactor {
    fn weight(&self) -> Weight {
        let [sr, st, sv, sb] = self.sigmas;
        let mut s = Vec::with_capacity(15);
        s.extend_from_slice(&[sr; 3]);
        s.extend_from_slice(&[st; 3]);
        s.extend_from_slice(&[sv; 3]);
        s.extend_from_slice(&[sb; 6]);
        info_from_sigmas(&s)
    }

    fn residual_fn(&self) -> impl Fn(&[Value]) -> DVector<f64> + '_ {
        move |vars: &[Value]| Value::State(self.prior).local(&vars[0])
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual_fn()(&[Value::State(*values.state(&self.key))]);
        self.weight().quad(&r)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        numeric_linearized(vec![self.key], values, &self.weight(), &self.residual_fn())
    }
}

/// Prior anchoring a pose variable.
pub struct PosePriorFactor {
    pub key: VariableKey,
    pub prior: Pose,
    pub rot_sigma: f64,
    pub trans_sigma: f64,
}

impl PosePriorFactor {
    fn weight(&self) -> Weight {
        info_from_sigmas(&[
            self.rot_sigma,
            self.rot_sigma,
            self.rot_sigma,
            self.trans_sigma,
            self.trans_sigma,
            self.trans_sigma,
        ])
    }

    fn residual_fn(&self) -> impl Fn(&[Value]) -> DVector<f64> + '_ {
        move |vars: &[Value]| Value::Pose(self.prior).local(&Value::Pose(vars[0].as_pose()))
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual_fn()(&[values.get(&self.key).unwrap().clone()]);
        self.weight().quad(&r)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        numeric_linearized(vec![self.key], values, &self.weight(), &self.residual_fn())
    }
}

/// Relative-pose constraint `log(measured^-1 (a^-1 b))`.
pub struct BetweenPoseFactor {
    pub key_a: VariableKey,
    pub key_b: VariableKey,
    pub measured: Pose,
    pub rot_sigma: f64,
    pub trans_sigma: f64,
}

impl BetweenPoseFactor {
    fn weight(&self) -> Weight {
        info_from_sigmas(&[
            self.rot_sigma,
            self.rot_sigma,
            self.rot_sigma,
            self.trans_sigma,
            self.trans_sigma,
            self.trans_sigma,
        ])
    }

    fn residual_fn(&self) -> impl Fn(&[Value]) -> DVector<f64> + '_ {
        move |vars: &[Value]| {
            let rel = vars[0].as_pose().inverse() * vars[1].as_pose();
            let r = (self.measured.inverse() * rel).log();
            DVector::from_column_slice(r.as_vector().as_slice())
        }
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual_fn()(&[
            values.get(&self.key_a).unwrap().clone(),
            values.get(&self.key_b).unwrap().clone(),
        ]);
        self.weight().quad(&r)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        numeric_linearized(vec![self.key_a, self.key_b], values, &self.weight(), &self.residual_fn())
    }
}

/// Velocity/bias anchor keeping a state near its marginalized estimate.
pub struct BiasVelocityPriorFactor {
    pub key: VariableKey,
    pub velocity_ref: Vector3<f64>,
    pub bias_ref: Vector6<f64>,
    pub vel_sigma: f64,
    pub bias_sigma: f64,
}

impl BiasVelocityPriorFactor {
    fn weight(&self) -> Weight {
        info_from_sigmas(&[
            self.vel_sigma,
            self.vel_sigma,
            self.vel_sigma,
            self.bias_sigma,
            self.bias_sigma,
            self.bias_sigma,
            self.bias_sigma,
            self.bias_sigma,
            self.bias_sigma,
        ])
    }

    fn residual(&self, values: &Values) -> DVector<f64> {
        let x = values.state(&self.key);
        let mut r = DVector::zeros(9);
        r.rows_mut(0, 3).copy_from(&(x.velocity - self.velocity_ref));
        r.rows_mut(3, 6).copy_from(&(x.bias() - self.bias_ref));
        r
    }

    pub fn cost(&self, values: &Values) -> f64 {
        self.weight().quad(&self.residual(values))
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let r = self.residual(values);
        let mut j = DMatrix::zeros(9, 15);
        j.view_mut((0, 6), (9, 9)).copy_from(&DMatrix::identity(9, 9));
        Ok(LinearizedFactor::from_residual(vec![self.key], vec![j], &self.weight(), &r))
    }
}

/// Ties a visual keyframe pose to the interpolation of its bracketing states.
pub struct VisualKeyframeFactor {
    pub vk_key: VariableKey,
    pub state_l: VariableKey,
    pub state_r: VariableKey,
    pub alpha: f64,
    pub sigma: f64,
}

impl VisualKeyframeFactor {
    fn residual_fn(&self) -> impl Fn(&[Value]) -> DVector<f64> + '_ {
        move |vars: &[Value]| {
            let c = vars[0].as_pose();
            let r = visual_keyframe_residual(&c, &vars[1].as_pose(), &vars[2].as_pose(), self.alpha);
            DVector::from_column_slice(r.as_slice())
        }
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual_fn()(&[
            values.get(&self.vk_key).unwrap().clone(),
            values.get(&self.state_l).unwrap().clone(),
            values.get(&self.state_r).unwrap().clone(),
        ]);
        r.norm_squared() / (self.sigma * self.sigma)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        numeric_linearized(
            vec![self.vk_key, self.state_l, self.state_r],
            values,
            &Weight::Scalar(1.0 / (self.sigma * self.sigma)),
            &self.residual_fn(),
        )
    }
}

/// Huber-robustified projection factor over a visual keyframe pose and a
/// landmark.
pub struct ProjectionFactor {
    pub vk_key: VariableKey,
    pub landmark_key: VariableKey,
    pub camera: CameraModel,
    pub observation: Vector2<f64>,
    pub huber_delta: f64,
    pub pixel_sigma: f64,
}

impl ProjectionFactor {
    fn raw_residual(&self, c: &Pose, l: &Vector3<f64>) -> Option<Vector2<f64>> {
        projection_residual(c, l, &self.camera, &self.observation)
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let c = values.pose(&self.vk_key);
        let l = values.point(&self.landmark_key);
        match self.raw_residual(&c, &l) {
            Some(r) => {
                let e2 = r.norm_squared() / (self.pixel_sigma * self.pixel_sigma);
                huber_cost(e2, self.huber_delta)
            }
            None => 0.0,
        }
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let c = values.pose(&self.vk_key);
        let l = values.point(&self.landmark_key);
        let keys = vec![self.vk_key, self.landmark_key];
        let Some(r0) = self.raw_residual(&c, &l) else {
            // Behind the camera: deactivated for this iteration.
            return Ok(LinearizedFactor::zero(keys));
        };
        let inv_sigma2 = 1.0 / (self.pixel_sigma * self.pixel_sigma);
        let e = (r0.norm_squared() * inv_sigma2).sqrt();
        let w = huber_weight(e, self.huber_delta) * inv_sigma2;
        let residual_fn = move |vars: &[Value]| {
            let c = vars[0].as_pose();
            let l = vars[1].as_point();
            match projection_residual(&c, &l, &self.camera, &self.observation) {
                Some(r) => DVector::from_column_slice(r.as_slice()),
                None => DVector::zeros(2),
            }
        };
        numeric_linearized(keys, values, &Weight::Scalar(w), &residual_fn)
    }
}

/// Which end of the submap an endpoint factor constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndpointSide {
    First,
    Last,
}

/// Relative-state factor between a submap pose and one of its endpoints.
///
/// The stored relative quantities `(T', v', b')` are fixed at submap
/// creation; the residual stacks the pose log, the rotated velocity
/// difference, and the bias difference.
pub struct EndpointFactor {
    pub submap_key: VariableKey,
    pub endpoint_key: VariableKey,
    pub side: EndpointSide,
    pub rel_pose: Pose,
    pub rel_velocity: Vector3<f64>,
    pub rel_bias: Vector6<f64>,
    /// Sigmas: rotation, translation, velocity, bias.
    pub sigmas: [f64; 4],
}

impl EndpointFactor {
    fn weight(&self) -> Weight {
        let [sr, st, sv, sb] = self.sigmas;
        let mut s = Vec::with_capacity(15);
        s.extend_from_slice(&[sr; 3]);
        s.extend_from_slice(&[st; 3]);
        s.extend_from_slice(&[sv; 3]);
        s.extend_from_slice(&[sb; 6]);
        info_from_sigmas(&s)
    }

    fn residual_fn(&self) -> impl Fn(&[Value]) -> DVector<f64> + '_ {
        move |vars: &[Value]| {
            let submap = vars[0].as_pose();
            let ep = vars[1].as_state();
            let pose_log = (submap * self.rel_pose * ep.pose.inverse()).log();
            let vel = self.rel_velocity - submap.rotation_matrix().transpose() * ep.velocity;
            let bias = self.rel_bias - ep.bias();
            let mut r = DVector::zeros(15);
            r.rows_mut(0, 3).copy_from(&pose_log.rotational);
            r.rows_mut(3, 3).copy_from(&pose_log.translational);
            r.rows_mut(6, 3).copy_from(&vel);
            r.rows_mut(9, 6).copy_from(&bias);
            r
        }
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let r = self.residual_fn()(&[
            values.get(&self.submap_key).unwrap().clone(),
            values.get(&self.endpoint_key).unwrap().clone(),
        ]);
        self.weight().quad(&r)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        numeric_linearized(
            vec![self.submap_key, self.endpoint_key],
            values,
            &self.weight(),
            &self.residual_fn(),
        )
    }
}

/// Gaussian prior in information form produced by marginalization; anchored
/// at stored linearization values and re-centered to first order.
pub struct LinearPriorFactor {
    pub keys: Vec<VariableKey>,
    pub lin_values: Vec<Value>,
    pub hessian: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub cost0: f64,
}

impl LinearPriorFactor {
    fn stacked_delta(&self, values: &Values) -> DVector<f64> {
        let dim: usize = self.keys.iter().map(|k| k.dim()).sum();
        let mut delta = DVector::zeros(dim);
        let mut off = 0;
        for (key, lin) in self.keys.iter().zip(&self.lin_values) {
            let d = lin.local(values.get(key).expect("linear prior key present"));
            delta.rows_mut(off, d.len()).copy_from(&d);
            off += d.len();
        }
        delta
    }

    pub fn cost(&self, values: &Values) -> f64 {
        let d = self.stacked_delta(values);
        self.cost0 + 2.0 * self.grad.dot(&d) + (d.transpose() * &self.hessian * &d)[(0, 0)]
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        let d = self.stacked_delta(values);
        let grad_full = &self.grad + &self.hessian * &d;
        let cost = self.cost(values);
        let mut grads = Vec::with_capacity(self.keys.len());
        let mut hessians = Vec::new();
        let offsets: Vec<usize> = self
            .keys
            .iter()
            .scan(0usize, |acc, k| {
                let cur = *acc;
                *acc += k.dim();
                Some(cur)
            })
            .collect();
        for (a, key_a) in self.keys.iter().enumerate() {
            grads.push(grad_full.rows(offsets[a], key_a.dim()).into_owned());
            for (b, key_b) in self.keys.iter().enumerate().skip(a) {
                hessians.push((
                    (a, b),
                    self.hessian
                        .view((offsets[a], offsets[b]), (key_a.dim(), key_b.dim()))
                        .into_owned(),
                ));
            }
        }
        Ok(LinearizedFactor { keys: self.keys.clone(), grads, hessians, cost })
    }
}

/// A factor of the estimation graph.
pub enum GraphFactor {
    Matching(MatchingFactor),
    Imu(ImuFactor),
    BiasWalk(BiasWalkFactor),
    StatePrior(StatePriorFactor),
    PosePrior(PosePriorFactor),
    BetweenPose(BetweenPoseFactor),
    BiasVelocityPrior(BiasVelocityPriorFactor),
    VisualKeyframe(VisualKeyframeFactor),
    Projection(ProjectionFactor),
    Endpoint(EndpointFactor),
    LinearPrior(LinearPriorFactor),
}

impl GraphFactor {
    pub fn keys(&self) -> Vec<VariableKey> {
        match self {
            GraphFactor::Matching(f) => f.keys(),
            GraphFactor::Imu(f) => vec![f.key_i, f.key_j],
            GraphFactor::BiasWalk(f) => vec![f.key_i, f.key_j],
            GraphFactor::StatePrior(f) => vec![f.key],
            GraphFactor::PosePrior(f) => vec![f.key],
            GraphFactor::BetweenPose(f) => vec![f.key_a, f.key_b],
            GraphFactor::BiasVelocityPrior(f) => vec![f.key],
            GraphFactor::VisualKeyframe(f) => vec![f.vk_key, f.state_l, f.state_r],
            GraphFactor::Projection(f) => vec![f.vk_key, f.landmark_key],
            GraphFactor::Endpoint(f) => vec![f.submap_key, f.endpoint_key],
            GraphFactor::LinearPrior(f) => f.keys.clone(),
        }
    }

    /// True nonlinear cost contribution at the given values.
    pub fn cost(&self, values: &Values) -> Result<f64> {
        Ok(match self {
            GraphFactor::Matching(f) => f.cost(values)?,
            GraphFactor::Imu(f) => f.cost(values),
            GraphFactor::BiasWalk(f) => f.cost(values),
            GraphFactor::StatePrior(f) => f.cost(values),
            GraphFactor::PosePrior(f) => f.cost(values),
            GraphFactor::BetweenPose(f) => f.cost(values),
            GraphFactor::BiasVelocityPrior(f) => f.cost(values),
            GraphFactor::VisualKeyframe(f) => f.cost(values),
            GraphFactor::Projection(f) => f.cost(values),
            GraphFactor::Endpoint(f) => f.cost(values),
            GraphFactor::LinearPrior(f) => f.cost(values),
        })
    }

    /// Refresh internal linearization-point state (IMU re-integration).
    pub fn prepare(&mut self, values: &Values) -> Result<()> {
        if let GraphFactor::Imu(f) = self {
            f.refresh(values)?;
        }
        Ok(())
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearizedFactor> {
        match self {
            GraphFactor::Matching(f) => f.linearize(values),
            GraphFactor::Imu(f) => f.linearize(values),
            GraphFactor::BiasWalk(f) => f.linearize(values),
            GraphFactor::StatePrior(f) => f.linearize(values),
            GraphFactor::PosePrior(f) => f.linearize(values),
            GraphFactor::BetweenPose(f) => f.linearize(values),
            GraphFactor::BiasVelocityPrior(f) => f.linearize(values),
            GraphFactor::VisualKeyframe(f) => f.linearize(values),
            GraphFactor::Projection(f) => f.linearize(values),
            GraphFactor::Endpoint(f) => f.linearize(values),
            GraphFactor::LinearPrior(f) => f.linearize(values),
        }
    }

    pub fn as_matching(&self) -> Option<&MatchingFactor> {
        match self {
            GraphFactor::Matching(f) => Some(f),
            _ => None,
        }
    }
}
