//! Heterogeneous treatment effect analysis for randomized trials: doubly
//! robust pseudo-outcomes, a permutation test against effect homogeneity,
//! effect-modifier ranking and CATE estimation, plus a simulation benchmark.

pub mod baselines;
pub mod data;
pub mod error;
pub mod hettest;
pub mod learners;
pub mod metalearners;
pub mod ranking;
pub mod rng;
pub mod simbench;
pub mod stats;

pub use error::{Error, Result};
