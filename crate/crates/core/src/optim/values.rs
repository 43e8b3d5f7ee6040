use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};

use crate::geometry::{Pose, SensorState, Twist6};

use super::key::{KeyKind, VariableKey};

/// Value of one variable. State tangents stack `(pose twist, velocity,
/// bias_accel, bias_gyro)`; poses retract by right multiplication.
#[derive(Clone, Debug)]
pub enum Value {
    State(SensorState),
    Pose(Pose),
    Point(Vector3<f64>),
}

impl Value {
    pub fn dim(&self) -> usize {
        match self {
            Value::State(_) => 15,
            Value::Pose(_) => 6,
            Value::Point(_) => 3,
        }
    }

    pub fn as_state(&self) -> &SensorState {
        match self {
            Value::State(s) => s,
            _ => panic!("value is not a state"),
        }
    }

    pub fn as_pose(&self) -> Pose {
        match self {
            Value::State(s) => s.pose,
            Value::Pose(p) => *p,
            _ => panic!("value has no pose"),
        }
    }

    pub fn as_point(&self) -> Vector3<f64> {
        match self {
            Value::Point(p) => *p,
            _ => panic!("value is not a point"),
        }
    }

    /// Retraction by a tangent slice of matching dimension.
    pub fn retract(&self, delta: &[f64]) -> Value {
        match self {
            Value::State(s) => {
                let xi = Twist6::new(
                    Vector3::new(delta[0], delta[1], delta[2]),
                    Vector3::new(delta[3], delta[4], delta[5]),
                );
                Value::State(SensorState {
                    stamp: s.stamp,
                    pose: s.pose.retract(&xi),
                    velocity: s.velocity + Vector3::new(delta[6], delta[7], delta[8]),
                    bias_accel: s.bias_accel + Vector3::new(delta[9], delta[10], delta[11]),
                    bias_gyro: s.bias_gyro + Vector3::new(delta[12], delta[13], delta[14]),
                })
            }
            Value::Pose(p) => {
                let xi = Twist6::new(
                    Vector3::new(delta[0], delta[1], delta[2]),
                    Vector3::new(delta[3], delta[4], delta[5]),
                );
                Value::Pose(p.retract(&xi))
            }
            Value::Point(p) => {
                Value::Point(p + Vector3::new(delta[0], delta[1], delta[2]))
            }
        }
    }

    /// Tangent `delta` such that `self.retract(delta) == other`.
    pub fn local(&self, other: &Value) -> DVector<f64> {
        match (self, other) {
            (Value::State(a), Value::State(b)) => {
                let xi = a.pose.local(&b.pose);
                let mut d = DVector::zeros(15);
                d.rows_mut(0, 3).copy_from(&xi.rotational);
                d.rows_mut(3, 3).copy_from(&xi.translational);
                d.rows_mut(6, 3).copy_from(&(b.velocity - a.velocity));
                d.rows_mut(9, 3).copy_from(&(b.bias_accel - a.bias_accel));
                d.rows_mut(12, 3).copy_from(&(b.bias_gyro - a.bias_gyro));
                d
            }
            (Value::Pose(a), Value::Pose(b)) => {
                let xi = a.local(b);
                let mut d = DVector::zeros(6);
                d.rows_mut(0, 3).copy_from(&xi.rotational);
                d.rows_mut(3, 3).copy_from(&xi.translational);
                d
            }
            (Value::Point(a), Value::Point(b)) => DVector::from_column_slice((b - a).as_slice()),
            _ => panic!("local between mismatched value kinds"),
        }
    }
}

/// Variable assignment for a factor graph. Deterministic iteration order.
#[derive(Clone, Debug, Default)]
pub struct Values {
    map: BTreeMap<VariableKey, Value>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, value: Value) {
        debug_assert!(matches_kind(key.kind, &value), "value kind mismatch for {key:?}");
        self.map.insert(key, value);
    }

    pub fn contains(&self, key: &VariableKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn get(&self, key: &VariableKey) -> Option<&Value> {
        self.map.get(key)
    }

    pub fn state(&self, key: &VariableKey) -> &SensorState {
        self.map[key].as_state()
    }

    pub fn pose(&self, key: &VariableKey) -> Pose {
        self.map[key].as_pose()
    }

    pub fn point(&self, key: &VariableKey) -> Vector3<f64> {
        self.map[key].as_point()
    }

    pub fn remove(&mut self, key: &VariableKey) -> Option<Value> {
        self.map.remove(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VariableKey> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &Value)> {
        self.map.iter()
    }

    /// Applies per-key tangent updates, producing a new assignment.
    pub fn retracted(&self, deltas: &BTreeMap<VariableKey, DVector<f64>>) -> Values {
        let mut out = self.clone();
        for (key, delta) in deltas {
            if let Some(v) = out.map.get_mut(key) {
                *v = v.retract(delta.as_slice());
            }
        }
        out
    }
}

fn matches_kind(kind: KeyKind, value: &Value) -> bool {
    matches!(
        (kind, value),
        (KeyKind::State, Value::State(_))
            | (KeyKind::EndpointState, Value::State(_))
            | (KeyKind::VisualKeyframe, Value::Pose(_))
            | (KeyKind::SubmapPose, Value::Pose(_))
            | (KeyKind::Landmark, Value::Point(_))
    )
}
