//! Actor-critic scheduling agent.

mod a2c;
mod action;
mod controller;
mod features;
pub mod nn;
mod optim;
mod reward;

pub use a2c::{
    argmax, exploration_ratio, masked_distribution, sample, AgentConfig, AgentNets, ExploreChoice, Mode,
};
pub use action::{mask_actions, resolve, Resolved, SchedAction, Shift, Steps, NUM_ACTIONS};
pub use controller::{requests_dedicated_cores, Decision, FaaSchedController, Phase};
pub use features::{preprocess, scale_contention, CalibrationBounds, FeatureVector, CONT_SCALE, FEATURE_DIM};
pub use optim::{AdamState, Optimizer};
pub use reward::{out_of_range, r_cont, reward, reward_terms, td_error, RewardConfig};
