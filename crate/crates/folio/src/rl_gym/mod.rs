//! Rebalancing environment and PPO trainer.
//!
//! The environment walks a historical return segment one step at a time. An
//! agent picks target weights, pays a linear transaction cost on the turnover
//! against its drifted holdings, and receives the log growth of wealth as
//! reward:
//!
//! ```text
//! r_t = ln(A . Y - mu * sum_i |A_i - W_i|)
//! ```
//!
//! where `A` is the chosen allocation, `Y` the vector of price relatives over
//! the step, `W` the pre-trade (drifted) holdings, and `mu` the cost
//! coefficient. Because rewards are logs, they telescope: the sum of rewards
//! over an episode is exactly the log of the final/initial wealth ratio.
//!
//! The PPO agent samples actions from a Dirichlet distribution whose
//! concentration is `softplus(logits) + 1`, so every action lies strictly
//! inside the simplex and has a finite log-density. Evaluation uses the
//! distribution mean, which plays the role of a softmax head.

mod dirichlet;
mod env;
mod ppo;

pub use dirichlet::{concentration, log_density, log_density_grad, mean_action, sample, softplus};
pub use env::{
    build_observation, drift_weights, reward, window_covariance, EnvConfig, EnvState,
    PortfolioEnv, PriceRelatives, Step,
};
pub use ppo::{
    eval_episode, gae_advantages, ppo_update, train_ppo, PpoBatch, PpoConfig, PpoHistoryRow,
    PpoOutcome, Trajectory,
};

use crate::analytics::AnalyticsError;
use crate::policy_net::NetError;

#[derive(Debug, thiserror::Error)]
pub enum GymError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("segment too short: need {need} return rows, have {have}")]
    SegmentTooShort { need: usize, have: usize },
    #[error("episode start {got} out of range; last valid start is {max}")]
    BadStart { max: usize, got: usize },
    #[error("auxiliary feature rows ({got}) do not match return rows ({expected})")]
    AuxMismatch { expected: usize, got: usize },
    #[error("invalid action: {0}")]
    BadAction(String),
    #[error("action is off the simplex beyond tolerance (sum {sum})")]
    OffSimplex { sum: f64 },
    #[error("price relative must be positive and finite, got {value}")]
    BadPriceRelative { value: f64 },
    #[error("portfolio value {value} is non-positive after costs")]
    NonPositiveValue { value: f64 },
    #[error("ruin at step {step}: costs wiped out the portfolio")]
    Ruin { step: usize },
    #[error("episode is over; reset the environment")]
    EpisodeOver,
    #[error("{context}: lengths {left} and {right} do not match")]
    LengthMismatch { context: &'static str, left: usize, right: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Weights(#[from] AnalyticsError),
}
