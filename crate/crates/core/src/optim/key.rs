use std::fmt;

/// Variable families living in the estimation graphs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum KeyKind {
    /// Full sensor state (pose, velocity, biases): tangent dim 15.
    State,
    /// Interpolated camera keyframe pose: tangent dim 6.
    VisualKeyframe,
    /// 3D landmark position: tangent dim 3.
    Landmark,
    /// Submap origin pose: tangent dim 6.
    SubmapPose,
    /// Submap endpoint state: tangent dim 15.
    EndpointState,
}

/// Unique handle of a variable in a factor graph.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableKey {
    pub kind: KeyKind,
    pub index: u64,
}

impl VariableKey {
    pub fn state(index: u64) -> Self {
        Self { kind: KeyKind::State, index }
    }

    pub fn visual_keyframe(index: u64) -> Self {
        Self { kind: KeyKind::VisualKeyframe, index }
    }

    pub fn landmark(index: u64) -> Self {
        Self { kind: KeyKind::Landmark, index }
    }

    pub fn submap(index: u64) -> Self {
        Self { kind: KeyKind::SubmapPose, index }
    }

    pub fn endpoint(index: u64) -> Self {
        Self { kind: KeyKind::EndpointState, index }
    }

    /// Tangent-space dimension of the variable.
    pub fn dim(&self) -> usize {
        match self.kind {
            KeyKind::State | KeyKind::EndpointState => 15,
            KeyKind::VisualKeyframe | KeyKind::SubmapPose => 6,
            KeyKind::Landmark => 3,
        }
    }
}

impl fmt::Debug for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            KeyKind::State => "x",
            KeyKind::VisualKeyframe => "c",
            KeyKind::Landmark => "l",
            KeyKind::SubmapPose => "s",
            KeyKind::EndpointState => "e",
        };
        write!(f, "{}{}", tag, self.index)
    }
}
