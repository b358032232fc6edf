//! The rebalancing environment: state windows, the cost-penalized log-wealth
//! reward, and holding drift.

use super::GymError;
use crate::analytics::WeightVector;
use crate::market_data::{Normalization, ReturnMatrix};
use crate::mat::Matrix;

/// How far off the simplex an agent action may be before it is rejected
/// instead of renormalized.
pub const ACTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// Transaction-cost coefficient charged on turnover.
    pub mu_cost: f64,
    /// Feature window length in return rows.
    pub lookback: usize,
    /// Steps per episode.
    pub episode_len: usize,
    pub initial_wealth: f64,
    /// Rebalancing cadence: agents decide every this many steps and hold the
    /// drifted allocation in between. 1 means a decision every step.
    pub action_interval: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mu_cost: 0.001,
            lookback: 20,
            episode_len: 126,
            initial_wealth: 1.0,
            action_interval: 21,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), GymError> {
        if !(self.mu_cost.is_finite() && (0.0..=0.1).contains(&self.mu_cost)) {
            return Err(GymError::BadConfig(format!(
                "mu_cost out of range [0, 0.1]: {}",
                self.mu_cost
            )));
        }
        if self.lookback == 0 {
            return Err(GymError::BadConfig("lookback must be at least 1".into()));
        }
        if self.episode_len < 2 {
            return Err(GymError::BadConfig(format!(
                "episode_len must be at least 2, got {}",
                self.episode_len
            )));
        }
        if !(self.initial_wealth.is_finite() && self.initial_wealth > 0.0) {
            return Err(GymError::BadConfig(format!(
                "initial_wealth must be positive, got {}",
                self.initial_wealth
            )));
        }
        if self.action_interval == 0 {
            return Err(GymError::BadConfig("action_interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gross per-step growth factors `y_i = p_t / p_{t-1}`, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceRelatives(Vec<f64>);

impl PriceRelatives {
    pub fn new(y: Vec<f64>) -> Result<Self, GymError> {
        for &v in &y {
            if !(v.is_finite() && v > 0.0) {
                return Err(GymError::BadPriceRelative { value: v });
            }
        }
        Ok(Self(y))
    }

    /// From simple returns: `y = 1 + r`. Returns at or below -100% are invalid.
    pub fn from_returns(r: &[f64]) -> Result<Self, GymError> {
        Self::new(r.iter().map(|&x| 1.0 + x).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One decision point of an episode.
///
/// `step` counts applied returns so far; it equals `episode_len` only in the
/// terminal state returned alongside `done`, which must not be stepped again.
#[derive(Debug, Clone)]
pub struct EnvState {
    /// Standardized return window, oldest row first.
    pub window: Matrix,
    /// Covariance of the window rows.
    pub cov: Matrix,
    /// Current holdings after the previous step's drift.
    pub prev_weights: WeightVector,
    pub step: usize,
    /// Row offset of this episode within the segment.
    pub start: usize,
    /// Accumulated log growth; exactly the sum of rewards so far.
    pub log_growth: f64,
    pub initial_wealth: f64,
}

impl EnvState {
    pub fn wealth(&self) -> f64 {
        self.initial_wealth * self.log_growth.exp()
    }
}

#[derive(Debug)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Cost-penalized log growth: `ln(A . y - mu * sum |A_i - W_i|)`.
///
/// `prev_w` is the pre-trade allocation the turnover is measured against. A
/// non-positive argument (costs exceeding portfolio value) is an error that
/// callers treat as episode-ending ruin.
pub fn reward(
    action: &WeightVector,
    y: &PriceRelatives,
    prev_w: &WeightVector,
    mu: f64,
) -> Result<f64, GymError> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(GymError::BadConfig(format!("mu must be non-negative, got {mu}")));
    }
    if action.len() != y.len() || prev_w.len() != y.len() {
        return Err(GymError::LengthMismatch {
            context: "reward arguments",
            left: action.len(),
            right: y.len(),
        });
    }
    let growth: f64 =
        action.as_slice().iter().zip(y.as_slice()).map(|(a, yi)| a * yi).sum();
    let turnover: f64 = action
        .as_slice()
        .iter()
        .zip(prev_w.as_slice())
        .map(|(a, w)| (a - w).abs())
        .sum();
    let value = growth - mu * turnover;
    if value <= 0.0 {
        return Err(GymError::NonPositiveValue { value });
    }
    Ok(value.ln())
}

/// Post-trade holdings after one step of market drift:
/// `u_i = a_i y_i / sum_j a_j y_j`.
pub fn drift_weights(action: &WeightVector, y: &PriceRelatives) -> Result<WeightVector, GymError> {
    if action.len() != y.len() {
        return Err(GymError::LengthMismatch {
            context: "drift arguments",
            left: action.len(),
            right: y.len(),
        });
    }
    let mut u: Vec<f64> =
        action.as_slice().iter().zip(y.as_slice()).map(|(a, yi)| a * yi).collect();
    let sum: f64 = u.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(GymError::NonFinite("drifted holdings"));
    }
    for v in &mut u {
        *v /= sum;
    }
    Ok(WeightVector::new(u)?)
}

/// Renormalizes an action that is within [`ACTION_TOL`] of the simplex;
/// rejects anything further out.
fn sanitize_action(raw: &[f64], n: usize) -> Result<WeightVector, GymError> {
    if raw.len() != n {
        return Err(GymError::BadAction(format!(
            "expected {n} weights, got {}",
            raw.len()
        )));
    }
    let mut v = raw.to_vec();
    let mut sum = 0.0;
    for x in &mut v {
        if !x.is_finite() {
            return Err(GymError::BadAction("non-finite weight".into()));
        }
        if *x < -ACTION_TOL {
            return Err(GymError::BadAction(format!("negative weight {x}")));
        }
        if *x < 0.0 {
            *x = 0.0;
        }
        sum += *x;
    }
    if (sum - 1.0).abs() > ACTION_TOL {
        return Err(GymError::OffSimplex { sum });
    }
    for x in &mut v {
        *x /= sum;
    }
    Ok(WeightVector::new(v)?)
}

/// Observation layout shared by the environment and out-of-sample policy
/// replay: window rows oldest first, covariance row-major, current holdings,
/// then any auxiliary row.
pub fn build_observation(
    window: &Matrix,
    cov: &Matrix,
    holdings: &[f64],
    aux_row: Option<&[f64]>,
) -> Vec<f64> {
    let mut x = Vec::with_capacity(
        window.rows() * window.cols()
            + cov.rows() * cov.cols()
            + holdings.len()
            + aux_row.map_or(0, <[f64]>::len),
    );
    x.extend_from_slice(window.as_slice());
    x.extend_from_slice(cov.as_slice());
    x.extend_from_slice(holdings);
    if let Some(a) = aux_row {
        x.extend_from_slice(a);
    }
    x
}

/// Covariance of the window rows (unbiased); all zeros for a single row.
pub fn window_covariance(window: &Matrix) -> Matrix {
    let (t, n) = (window.rows(), window.cols());
    let mut cov = Matrix::zeros(n, n);
    if t < 2 {
        return cov;
    }
    let mut means = vec![0.0; n];
    for r in 0..t {
        for (m, v) in means.iter_mut().zip(window.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= t as f64;
    }
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for r in 0..t {
                let row = window.row(r);
                acc += (row[i] - means[i]) * (row[j] - means[j]);
            }
            let c = acc / (t - 1) as f64;
            cov.set(i, j, c);
            cov.set(j, i, c);
        }
    }
    cov
}

/// A return segment wrapped as an episodic environment.
///
/// Standardization uses externally fitted statistics so that evaluation
/// segments can reuse training moments.
pub struct PortfolioEnv {
    std_rows: Matrix,
    raw: Matrix,
    aux: Option<Matrix>,
    cfg: EnvConfig,
    n: usize,
}

impl PortfolioEnv {
    pub fn new(
        data: &ReturnMatrix,
        aux: Option<&Matrix>,
        norm: &Normalization,
        cfg: &EnvConfig,
    ) -> Result<Self, GymError> {
        cfg.validate()?;
        let need = cfg.lookback + cfg.episode_len;
        if data.rows() < need {
            return Err(GymError::SegmentTooShort { need, have: data.rows() });
        }
        let n = data.n_assets();
        if let Some(a) = aux {
            if a.rows() != data.rows() {
                return Err(GymError::AuxMismatch { expected: data.rows(), got: a.rows() });
            }
            if a.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(GymError::NonFinite("auxiliary features"));
            }
        }
        let mut std_rows = Matrix::zeros(data.rows(), n);
        for r in 0..data.rows() {
            let z = norm.apply(data.returns.row(r));
            std_rows.as_mut_slice()[r * n..(r + 1) * n].copy_from_slice(&z);
        }
        Ok(Self {
            std_rows,
            raw: data.returns.clone(),
            aux: aux.cloned(),
            cfg: cfg.clone(),
            n,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Number of valid episode start offsets in the segment.
    pub fn n_starts(&self) -> usize {
        self.raw.rows() - self.cfg.lookback - self.cfg.episode_len + 1
    }

    /// Length of the observation vector: window, covariance, holdings, and
    /// any auxiliary columns.
    pub fn feature_dim(&self) -> usize {
        self.cfg.lookback * self.n
            + self.n * self.n
            + self.n
            + self.aux.as_ref().map_or(0, Matrix::cols)
    }

    pub fn reset(&self) -> EnvState {
        self.reset_at(0).expect("offset 0 is always valid")
    }

    /// Starts an episode whose feature window begins at segment row `start`.
    pub fn reset_at(&self, start: usize) -> Result<EnvState, GymError> {
        if start >= self.n_starts() {
            return Err(GymError::BadStart { max: self.n_starts() - 1, got: start });
        }
        Ok(self.state_at(start, 0, WeightVector::uniform(self.n), 0.0))
    }

    fn state_at(&self, start: usize, step: usize, prev: WeightVector, log_growth: f64) -> EnvState {
        let lo = start + step;
        let window = self.std_rows.slice_rows(lo, lo + self.cfg.lookback);
        let cov = window_covariance(&window);
        EnvState {
            window,
            cov,
            prev_weights: prev,
            step,
            start,
            log_growth,
            initial_wealth: self.cfg.initial_wealth,
        }
    }

    /// Flattened observation via [`build_observation`], with the auxiliary
    /// row aligned to the newest window row.
    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        let aux_row = self
            .aux
            .as_ref()
            .map(|aux| aux.row(state.start + state.step + self.cfg.lookback - 1));
        build_observation(&state.window, &state.cov, state.prev_weights.as_slice(), aux_row)
    }

    /// Applies `action`, charges the turnover cost, and advances one row.
    ///
    /// Ruin (costs exceeding value) ends the episode with an error carrying
    /// the step index. A finished state cannot be stepped again.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step, GymError> {
        if state.step >= self.cfg.episode_len {
            return Err(GymError::EpisodeOver);
        }
        let a = sanitize_action(action, self.n)?;
        let row = self.raw.row(state.start + self.cfg.lookback + state.step);
        let y = PriceRelatives::from_returns(row)?;
        let r = reward(&a, &y, &state.prev_weights, self.cfg.mu_cost).map_err(|e| match e {
            GymError::NonPositiveValue { .. } => GymError::Ruin { step: state.step },
            other => other,
        })?;
        let drifted = drift_weights(&a, &y)?;
        let next_step = state.step + 1;
        let done = next_step == self.cfg.episode_len;
        let next = self.state_at(state.start, next_step, drifted, state.log_growth + r);
        Ok(Step { state: next, reward: r, done })
    }
}
