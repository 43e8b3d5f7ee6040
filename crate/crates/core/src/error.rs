use crate::optim::VariableKey;

/// Errors surfaced by the estimator and its supporting modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("imu stream has out-of-order stamps at t={0}")]
    ImuOutOfOrder(f64),

    #[error("imu gap of {gap:.4}s inside scan between t={start:.4} and t={end:.4} (nominal period {nominal:.4}s)")]
    ImuGap { start: f64, end: f64, gap: f64, nominal: f64 },

    #[error("imu stream does not cover [{0:.4}, {1:.4}]")]
    ImuCoverage(f64, f64),

    #[error("factor references key {0:?} with no value")]
    MissingValue(VariableKey),

    #[error("indeterminate linear system; near-null-space directions at {keys:?}")]
    IndeterminateSystem { keys: Vec<VariableKey> },

    #[error("marginalization: departing key {0:?} still referenced by a retained factor")]
    MarginalizationDependency(VariableKey),

    #[error("covariance sum not invertible for correspondence at point {0}")]
    SingularCovariance(usize),

    #[error("trajectory association produced {0} pairs; at least {1} required")]
    InsufficientAssociations(usize, usize),

    #[error("trajectory shorter than the requested sub-trajectory length {0} m")]
    TrajectoryTooShort(f64),

    #[error("submap {0}: {1}")]
    Submap(usize, String),

    #[error("{0}")]
    InvalidInput(String),
}
