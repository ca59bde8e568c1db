//! Answer-first structured relevance judgments: trajectory grammar, gated
//! verifiable reward, a synthetic relevance world, a slot-factored linear
//! policy, hybrid GRPO/SFT optimization, curriculum binning, a divergence
//! lab, evaluation metrics and an experiment runner.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod curriculum;
pub mod error;
pub mod grammar;
pub mod kl_lab;
pub mod metrics;
pub mod optim;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod runner;
pub mod scalar;
pub mod world;

pub use error::ConfigError;
pub use grammar::{
    format_gate, parse_trajectory, render_trajectory, CheckpointAnswer, FormatError, RelevanceLabel, SlotIndex,
    Trajectory,
};
pub use scalar::Scalar;

pub type Policy = policy::PolicyParams<f64>;
pub type RewardConfig = reward::RewardConfig<f64>;
pub type RewardBreakdown = reward::RewardBreakdown<f64>;
pub type WeightMask = reward::WeightMask<f64>;
pub type OptimConfig = optim::OptimConfig<f64>;
pub type HybridCoeffs = optim::HybridCoeffs<f64>;
pub type Categorical = kl_lab::Categorical<f64>;
pub type GibbsSpec = kl_lab::GibbsSpec<f64>;
