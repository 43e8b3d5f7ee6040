//! Nonlinear least squares over heterogeneous factors: Levenberg-Marquardt
//! batch solving, warm-started incremental updates, and fixed-lag
//! marginalization by boundary priors.

mod factor;
mod graph;
mod key;
mod linear;
mod lm;
mod marginal;
mod values;

pub use factor::{
    BetweenPoseFactor, BiasVelocityPriorFactor, BiasWalkFactor, EndpointFactor, EndpointSide,
    FrameData, GraphFactor, ImuFactor, LinearPriorFactor, LinearizedFactor, MatchingFactor,
    PosePriorFactor, PoseTarget, ProjectionFactor, StatePriorFactor, VisualKeyframeFactor, Weight,
};
pub use graph::FactorGraph;
pub use key::{KeyKind, VariableKey};
pub use linear::{BlockLayout, BlockSystem};
pub use lm::{incremental_update, lm_optimize, lm_optimize_with, Linearizer, LmConfig, OptimizeReport, Termination};
pub use marginal::marginalize;
pub use values::{Value, Values};
