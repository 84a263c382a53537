//! Base learners and the stacking ensemble.

pub mod ctree;
pub mod forest;
pub mod linear;
pub mod nnls;
pub mod stacking;

use serde::{Deserialize, Serialize};

pub use forest::{fit_conditional_forest, ConditionalForest, ForestParams, OobPrediction};
pub use linear::{fit_penalized_linear, LambdaSpec, LinearParams, PenalizedLinearModel};
pub use stacking::{fit_stacking, stacking_weights, FittedMember, MemberSpec, StackedModel, StackingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
}

pub const PROBABILITY_FLOOR: f64 = 1e-4;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}
