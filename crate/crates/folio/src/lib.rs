//! Risk-aware dynamic portfolio allocation engine.
//!
//! The pipeline runs in stages: [`market_data`] loads and cleans daily price
//! tables and converts them to simple returns; [`analytics`] estimates moments,
//! samples the long-only efficient frontier, searches asset subsets, and turns
//! weights into integer share counts; [`policy_net`] provides the MLP policy
//! with softmax head and exact backprop; [`sharpe_trainer`] ascends the
//! gradient of the full-period Sharpe ratio through the policy; [`rl_gym`]
//! wraps the market as an episodic environment with turnover costs and trains
//! a Dirichlet-policy agent with PPO; [`backtest`] replays strategies on
//! held-out data and reports comparable metrics.
//!
//! Everything is deterministic given a seed. Heavy loops (frontier sampling,
//! subset search, rollouts, per-step gradients) run data-parallel when the
//! `parallel` feature is on (default) and produce results identical to the
//! sequential fallback, because every work item derives its own seed and
//! reductions happen in index order.

pub mod analytics;
pub mod backtest;
pub mod exec;
pub mod market_data;
pub mod mat;
pub mod optim;
pub mod policy_net;
pub mod rl_gym;
pub mod sharpe_trainer;

pub use mat::Matrix;
