//! Threshold policies for two-group populations: utility-maximizing and
//! fairness-constrained thresholds, the effect of biased training data on
//! them, and the sensitivity of the thresholds to that bias.

pub mod bias;
pub mod dist;
pub mod error;
pub mod ingest;
pub mod numeric;
pub mod par;
pub mod policy;
pub mod population;
pub mod scenario;
pub mod sensitivity;

pub use bias::{BiasFamily, BiasSpec, BiasedPopulation, Shift, ShiftTarget};
pub use dist::ScoreDistribution;
pub use error::{Error, Result};
pub use par::Exec;
pub use policy::{
    evaluate, grid_oracle, solve_fair, solve_mu, Criterion, FairnessSpec, PolicyEvaluation,
    ThresholdPair,
};
pub use population::{synthetic, GroupId, GroupModel, PerGroup, Population};
pub use scenario::{run_scenario, Scenario, SweepResult};
pub use sensitivity::{sensitivity_feature_bias, sensitivity_label_bias, SensitivityReport};
