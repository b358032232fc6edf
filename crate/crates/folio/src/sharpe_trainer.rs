//! Direct policy-gradient training of the full-period Sharpe ratio.
//!
//! The objective is the population Sharpe of the realized portfolio return
//! series: `L = A / sqrt(B - A^2)` with `A = mean(R)` and `B = mean(R^2)`.
//! Its gradient with respect to each realized return has a closed form,
//!
//! ```text
//! dL/dA = B * S^(-3/2)          S = B - A^2
//! dL/dB = -(A / 2) * S^(-3/2)
//! dL/dR_t = dL/dA / T + dL/dB * 2 R_t / T
//! ```
//!
//! which chains through `R_t = w_{t-1} . r_t` and the softmax policy into the
//! network parameters. Training ascends that gradient over the whole trading
//! window each epoch (plain ascent by default, Adam optional) and stops early
//! once the objective plateaus.

use crate::analytics::WeightVector;
use crate::exec;
use crate::market_data::{Normalization, ReturnMatrix};
use crate::mat::Matrix;
use crate::optim::Adam;
use crate::policy_net::{
    backward, forward, init_params, ForwardCache, MlpParams, NetError, DEFAULT_HIDDEN,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need at least {need} return rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("weights path length {weights} does not match return rows {rows}")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("weight vector has {got} assets, returns have {expected}")]
    AssetMismatch { expected: usize, got: usize },
    #[error("realized returns have zero volatility; Sharpe ratio is undefined")]
    ZeroVolatility,
    #[error("non-finite value in realized returns")]
    NonFiniteReturns,
    #[error("training diverged at epoch {epoch}; lower the learning rate")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Optimizer choice for [`train`]: plain gradient ascent is the default,
/// Adam is available for rougher objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    GradientAscent,
    Adam,
}

/// Early-stop rule: training halts after this many consecutive epochs whose
/// objective moved less than [`PLATEAU_TOL`].
pub const PLATEAU_EPOCHS: usize = 10;
pub const PLATEAU_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SharpeTrainConfig {
    /// Ascent step size.
    pub alpha: f64,
    pub epochs: usize,
    /// Trading-window length T: number of decision steps per epoch.
    pub trading_len: usize,
    /// Feature window: each decision sees this many trailing return rows.
    pub lookback: usize,
    /// Variance floor; `B - A^2` below `eps_vol^2` is clamped to it.
    pub eps_vol: f64,
    /// Optional L2 penalty coefficient on the parameters (0 disables).
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for SharpeTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            epochs: 200,
            trading_len: 252,
            lookback: 20,
            eps_vol: 1e-8,
            weight_decay: 0.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            optimizer: OptimizerKind::GradientAscent,
        }
    }
}

impl SharpeTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(TrainError::BadConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.trading_len < 2 {
            return Err(TrainError::BadConfig(format!(
                "trading_len must be at least 2, got {}",
                self.trading_len
            )));
        }
        if self.lookback == 0 {
            return Err(TrainError::BadConfig("lookback must be at least 1".into()));
        }
        if !(self.eps_vol.is_finite() && self.eps_vol > 0.0) {
            return Err(TrainError::BadConfig(format!(
                "eps_vol must be positive, got {}",
                self.eps_vol
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Trained policy plus everything needed to replay it out of sample.
#[derive(Debug, Clone)]
pub struct SharpeTrainOutcome {
    pub params: MlpParams,
    /// Objective value per completed epoch, recorded before that epoch's
    /// parameter update.
    pub history: Vec<f64>,
    pub norm: Normalization,
}

/// Portfolio returns along a weight path: `R_t = weights[t] . returns[t]`.
/// `weights[t]` is the allocation held while return row `t` realizes.
pub fn realized_returns(
    weights: &[WeightVector],
    returns: &Matrix,
) -> Result<Vec<f64>, TrainError> {
    if weights.len() != returns.rows() {
        return Err(TrainError::LengthMismatch { weights: weights.len(), rows: returns.rows() });
    }
    let n = returns.cols();
    let mut out = Vec::with_capacity(weights.len());
    for (t, w) in weights.iter().enumerate() {
        if w.len() != n {
            return Err(TrainError::AssetMismatch { expected: n, got: w.len() });
        }
        let r: f64 = w.as_slice().iter().zip(returns.row(t)).map(|(wi, ri)| wi * ri).sum();
        out.push(r);
    }
    Ok(out)
}

fn moments(returns: &[f64]) -> Result<(f64, f64, f64), TrainError> {
    if returns.len() < 2 {
        return Err(TrainError::TooFewRows { need: 2, have: returns.len() });
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(TrainError::NonFiniteReturns);
    }
    let t = returns.len() as f64;
    let a = returns.iter().sum::<f64>() / t;
    let b = returns.iter().map(|r| r * r).sum::<f64>() / t;
    Ok((a, b, b - a * a))
}

/// Population Sharpe ratio `A / sqrt(max(B - A^2, eps_vol^2))`. Zero or
/// negative variance (a constant series) is an error rather than infinity.
pub fn sharpe_objective(returns: &[f64], eps_vol: f64) -> Result<f64, TrainError> {
    let (a, _, s) = moments(returns)?;
    if s <= 0.0 {
        return Err(TrainError::ZeroVolatility);
    }
    Ok(a / s.max(eps_vol * eps_vol).sqrt())
}

/// Closed-form gradient of [`sharpe_objective`] with respect to each
/// realized return, using the same variance floor as the objective.
pub fn sharpe_grad_wrt_returns(returns: &[f64], eps_vol: f64) -> Result<Vec<f64>, TrainError> {
    let (a, b, s) = moments(returns)?;
    if s <= 0.0 {
        return Err(TrainError::ZeroVolatility);
    }
    let t = returns.len() as f64;
    let pow = s.max(eps_vol * eps_vol).powf(-1.5);
    let dl_da = b * pow;
    let dl_db = -(a / 2.0) * pow;
    Ok(returns.iter().map(|&r| dl_da / t + dl_db * 2.0 * r / t).collect())
}

/// One plain ascent update: `theta + alpha * grad`, shapes must match.
pub fn grad_ascent_step(
    params: &MlpParams,
    grad: &MlpParams,
    alpha: f64,
) -> Result<MlpParams, TrainError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(TrainError::BadConfig(format!("alpha must be positive, got {alpha}")));
    }
    if params.layer_sizes() != grad.layer_sizes() {
        return Err(TrainError::BadConfig(format!(
            "gradient shape {:?} does not match parameters {:?}",
            grad.layer_sizes(),
            params.layer_sizes()
        )));
    }
    let mut next = params.clone();
    next.scaled_add(grad, alpha);
    Ok(next)
}

/// Feature vector for the decision made just before return row `t`: the
/// `lookback` standardized rows ending at `t - 1`, flattened oldest first.
/// `None` when `t` has insufficient history.
pub fn features_at(
    data: &ReturnMatrix,
    norm: &Normalization,
    t: usize,
    lookback: usize,
) -> Option<Vec<f64>> {
    if t < lookback || t > data.rows() {
        return None;
    }
    let mut x = Vec::with_capacity(lookback * data.n_assets());
    for r in t - lookback..t {
        x.extend(norm.apply(data.returns.row(r)));
    }
    Some(x)
}

/// Full-period objective and its exact parameter gradient at `params`,
/// before any regularization.
///
/// Runs a forward pass per decision step (parallel), scores the realized
/// return series, then backpropagates each step's contribution and folds in
/// step order so the result never depends on thread count.
pub fn objective_and_gradient(
    data: &ReturnMatrix,
    norm: &Normalization,
    params: &MlpParams,
    cfg: &SharpeTrainConfig,
) -> Result<(f64, MlpParams), TrainError> {
    let t_len = cfg.trading_len;
    let passes: Vec<Result<(WeightVector, ForwardCache), NetError>> =
        exec::map_indexed(t_len, |k| {
            let x = features_at(data, norm, cfg.lookback + k, cfg.lookback)
                .expect("row range checked by the caller");
            forward(params, &x)
        });
    let mut weights = Vec::with_capacity(t_len);
    let mut caches = Vec::with_capacity(t_len);
    for p in passes {
        let (w, c) = p?;
        weights.push(w);
        caches.push(c);
    }
    let applied = data.returns.slice_rows(cfg.lookback, cfg.lookback + t_len);
    let realized = realized_returns(&weights, &applied)?;
    let objective = sharpe_objective(&realized, cfg.eps_vol)?;

    let dl_dr = sharpe_grad_wrt_returns(&realized, cfg.eps_vol)?;
    let per_step: Vec<Result<MlpParams, NetError>> = exec::map_indexed(t_len, |k| {
        let row = applied.row(k);
        let grad_w: Vec<f64> = row.iter().map(|&r| dl_dr[k] * r).collect();
        backward(params, &caches[k], &grad_w)
    });
    let mut total = params.zeros_like();
    for g in per_step {
        total.scaled_add(&g?, 1.0);
    }
    Ok((objective, total))
}

/// Trains the softmax policy to maximize the full-period Sharpe ratio on the
/// first `lookback + trading_len` rows of `data`.
///
/// Each epoch runs every decision step (forward passes parallelize; the
/// gradient is accumulated in step order so results never depend on thread
/// count), takes one ascent step, and records the pre-update objective.
/// Stops early on a [`PLATEAU_EPOCHS`]-long plateau. Zero epochs returns the
/// freshly initialized parameters and an empty history.
pub fn train(
    data: &ReturnMatrix,
    cfg: &SharpeTrainConfig,
    seed: u64,
) -> Result<SharpeTrainOutcome, TrainError> {
    cfg.validate()?;
    let n = data.n_assets();
    let needed = cfg.lookback + cfg.trading_len;
    if data.rows() < needed {
        return Err(TrainError::TooFewRows { need: needed, have: data.rows() });
    }
    let norm = Normalization::fit(data);
    let mut sizes = vec![cfg.lookback * n];
    sizes.extend(&cfg.hidden);
    sizes.push(n);
    let mut params = init_params(&sizes, exec::derive_seed(seed, "sharpe-init", 0))?;
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam => Some(Adam::new(cfg.alpha, &params)),
        OptimizerKind::GradientAscent => None,
    };

    let mut history = Vec::new();
    let mut plateau = 0usize;
    let mut prev = None;
    for epoch in 0..cfg.epochs {
        let (objective, mut total) = objective_and_gradient(data, &norm, &params, cfg)?;
        if !objective.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(objective);

        if cfg.weight_decay > 0.0 {
            total.scaled_add(&params, -cfg.weight_decay);
        }

        match &mut adam {
            Some(opt) => opt.step(&mut params, &total, true),
            None => params = grad_ascent_step(&params, &total, cfg.alpha)?,
        }
        if !params.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }

        if let Some(p) = prev {
            if (objective - p as f64).abs() < PLATEAU_TOL {
                plateau += 1;
                if plateau >= PLATEAU_EPOCHS {
                    break;
                }
            } else {
                plateau = 0;
            }
        }
        prev = Some(objective);
    }

    Ok(SharpeTrainOutcome { params, history, norm })
}
