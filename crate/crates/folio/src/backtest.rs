//! Walk-forward strategy evaluation with the same linear turnover cost model
//! as the training environment.
//!
//! Simulation starts from cash: the first allocation pays `mu` on its full
//! weight (turnover 1). Between rebalance points holdings drift with prices
//! and incur no cost. Per step,
//!
//! ```text
//! equity_{t+1} = equity_t * (w_t . y_t - mu * sum |w_t - h_t|)
//! ```
//!
//! where `h_t` are the drifted holdings carried into the step and `w_t` the
//! allocation held through it. Metrics follow the arithmetic-return
//! convention for volatility and geometric annualization for returns, so the
//! reported annual return is path-exact.

use crate::analytics::{
    covariance, expected_returns, max_sharpe, sample_frontier, AnalyticsError, WeightVector,
};
use crate::market_data::{to_returns, DataError, Normalization, PriceTable, ReturnMatrix};
use crate::mat::Matrix;
use crate::policy_net::{forward, forward_raw, MlpParams, NetError};
use crate::rl_gym::{
    build_observation, concentration, drift_weights, mean_action, window_covariance, GymError,
    PriceRelatives,
};
use crate::sharpe_trainer::features_at;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BacktestError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("need at least {need} price rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("strategy expects {expected} assets, segment has {got}")]
    AssetMismatch { expected: usize, got: usize },
    #[error("ruin at step {step}: costs exceeded portfolio value")]
    Ruin { step: usize },
    #[error("the weight path must allocate at step 0")]
    NoInitialAllocation,
    #[error("{context}: lengths {left} and {right} do not match")]
    LengthMismatch { context: &'static str, left: usize, right: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("equity curves must be strictly positive")]
    NonPositiveEquity,
    #[error("comparison needs at least one report")]
    EmptyComparison,
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Gym(#[from] GymError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// What a strategy does at each rebalance point.
#[derive(Debug, Clone)]
pub enum StrategyKind {
    /// Rebalance to `1/N` every time.
    EqualWeight { n: usize },
    /// Buy once at the start, never trade again.
    BuyAndHold { weights: WeightVector },
    /// Rebalance back to fixed fitted weights.
    MeanVariance { weights: WeightVector },
    /// Softmax policy over a standardized return window.
    SharpePolicy { params: MlpParams, norm: Normalization, lookback: usize },
    /// Trained actor evaluated at its Dirichlet mean over the shared
    /// observation layout; `aux` rows align with the segment's return rows.
    DrlPpo { actor: MlpParams, norm: Normalization, lookback: usize, aux: Option<Matrix> },
}

#[derive(Debug, Clone)]
pub struct StrategyRef {
    pub name: String,
    pub kind: StrategyKind,
    /// Steps between rebalances; `usize::MAX` never rebalances after step 0.
    pub rebalance_interval: usize,
}

/// Constant `1/N` targets at every rebalance point.
pub fn equal_weight_strategy(n: usize, rebalance_interval: usize) -> Result<StrategyRef, BacktestError> {
    if n == 0 {
        return Err(BacktestError::BadConfig("universe must have at least 1 asset".into()));
    }
    Ok(StrategyRef {
        name: "equal_weight".into(),
        kind: StrategyKind::EqualWeight { n },
        rebalance_interval,
    })
}

/// Max-Sharpe portfolio sampled on training returns, held fixed out of
/// sample and re-trades back to it at each rebalance point.
pub fn mean_variance_strategy(
    train: &ReturnMatrix,
    periods_per_year: f64,
    n_samples: usize,
    seed: u64,
    rebalance_interval: usize,
) -> Result<StrategyRef, BacktestError> {
    let mu = expected_returns(train, periods_per_year)?;
    let cov = covariance(train, periods_per_year)?;
    let frontier = sample_frontier(&mu, &cov, n_samples, seed)?;
    let best = max_sharpe(&frontier)?;
    Ok(StrategyRef {
        name: "mean_variance".into(),
        kind: StrategyKind::MeanVariance { weights: best.weights },
        rebalance_interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ann_return: f64,
    pub ann_vol: f64,
    /// `None` when volatility is zero: the ratio is undefined, not infinite.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    /// `None` when tracking error against the benchmark is zero.
    pub info_ratio: Option<f64>,
    pub winning_days: f64,
    /// Mean turnover per period.
    pub turnover: f64,
    /// Currency lost to costs over the whole run.
    pub cost_paid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub period: Period,
    pub metrics: Metrics,
    pub equity: Vec<(NaiveDate, f64)>,
}

/// Raw output of the wealth simulation, before metrics.
#[derive(Debug, Clone)]
pub struct WeightPathResult {
    /// One more entry than return rows; starts at the initial wealth.
    pub equity: Vec<f64>,
    pub step_turnover: Vec<f64>,
    pub cost_paid: f64,
}

fn simulate<F>(
    returns: &Matrix,
    mu_cost: f64,
    initial_wealth: f64,
    mut decide: F,
) -> Result<WeightPathResult, BacktestError>
where
    F: FnMut(usize, &[f64]) -> Result<Option<WeightVector>, BacktestError>,
{
    if !(mu_cost.is_finite() && mu_cost >= 0.0) {
        return Err(BacktestError::BadConfig(format!(
            "mu_cost must be non-negative, got {mu_cost}"
        )));
    }
    if !(initial_wealth.is_finite() && initial_wealth > 0.0) {
        return Err(BacktestError::BadConfig(format!(
            "initial_wealth must be positive, got {initial_wealth}"
        )));
    }
    let steps = returns.rows();
    let n = returns.cols();
    let mut equity = Vec::with_capacity(steps + 1);
    equity.push(initial_wealth);
    let mut step_turnover = Vec::with_capacity(steps);
    let mut cost_paid = 0.0;
    // Holdings before the first trade: all cash.
    let mut holdings = vec![0.0; n];
    for t in 0..steps {
        let target = decide(t, &holdings)?;
        let w = match target {
            Some(w) => {
                if w.len() != n {
                    return Err(BacktestError::AssetMismatch { expected: w.len(), got: n });
                }
                w
            }
            None if t == 0 => return Err(BacktestError::NoInitialAllocation),
            None => WeightVector::new(holdings.clone())?,
        };
        let turnover: f64 =
            w.as_slice().iter().zip(&holdings).map(|(a, h)| (a - h).abs()).sum();
        let y = PriceRelatives::from_returns(returns.row(t))?;
        let growth: f64 =
            w.as_slice().iter().zip(y.as_slice()).map(|(a, yi)| a * yi).sum();
        let factor = growth - mu_cost * turnover;
        if !(factor.is_finite() && factor > 0.0) {
            return Err(BacktestError::Ruin { step: t });
        }
        let e = *equity.last().expect("equity starts non-empty");
        cost_paid += e * mu_cost * turnover;
        equity.push(e * factor);
        step_turnover.push(turnover);
        holdings = drift_weights(&w, &y)?.into_vec();
    }
    Ok(WeightPathResult { equity, step_turnover, cost_paid })
}

/// Simulates a fixed target path: `targets[t] = Some(w)` trades to `w` at
/// step `t`, `None` holds the drifted book. Step 0 must allocate. This is
/// the oracle surface for cost properties: the same path under a higher
/// `mu_cost` can never finish wealthier.
pub fn run_weight_path(
    targets: &[Option<WeightVector>],
    returns: &Matrix,
    mu_cost: f64,
    initial_wealth: f64,
) -> Result<WeightPathResult, BacktestError> {
    if targets.len() != returns.rows() {
        return Err(BacktestError::LengthMismatch {
            context: "weight path",
            left: targets.len(),
            right: returns.rows(),
        });
    }
    simulate(returns, mu_cost, initial_wealth, |t, _| Ok(targets[t].clone()))
}

fn decide_for(
    strategy: &StrategyRef,
    data: &ReturnMatrix,
    std_rows: &Option<Matrix>,
    t: usize,
    holdings: &[f64],
) -> Result<Option<WeightVector>, BacktestError> {
    let n = data.n_assets();
    let rebalance = match strategy.kind {
        StrategyKind::BuyAndHold { .. } => t == 0,
        _ => t % strategy.rebalance_interval == 0,
    };
    if !rebalance {
        return Ok(None);
    }
    let w = match &strategy.kind {
        StrategyKind::EqualWeight { n: expected } => {
            if *expected != n {
                return Err(BacktestError::AssetMismatch { expected: *expected, got: n });
            }
            WeightVector::uniform(n)
        }
        StrategyKind::BuyAndHold { weights } | StrategyKind::MeanVariance { weights } => {
            if weights.len() != n {
                return Err(BacktestError::AssetMismatch { expected: weights.len(), got: n });
            }
            weights.clone()
        }
        StrategyKind::SharpePolicy { params, norm, lookback } => {
            match features_at(data, norm, t, *lookback) {
                Some(x) => forward(params, &x)?.0,
                // Not enough history yet: hold the market evenly.
                None => WeightVector::uniform(n),
            }
        }
        StrategyKind::DrlPpo { actor, norm: _, lookback, aux } => {
            if t < *lookback {
                WeightVector::uniform(n)
            } else {
                let std_rows = std_rows.as_ref().expect("standardized rows precomputed");
                let window = std_rows.slice_rows(t - lookback, t);
                let cov = window_covariance(&window);
                let aux_row = aux.as_ref().map(|a| a.row(t - 1));
                let x = build_observation(&window, &cov, holdings, aux_row);
                let (logits, _) = forward_raw(actor, &x)?;
                mean_action(&concentration(&logits))?
            }
        }
    };
    Ok(Some(w))
}

/// Backtests one strategy over a price segment and reports the standard
/// metric suite. The information ratio benchmark is the per-step rebalanced
/// equal-weight portfolio under the same cost coefficient.
pub fn run_strategy(
    strategy: &StrategyRef,
    prices: &PriceTable,
    mu_cost: f64,
    initial_wealth: f64,
    periods_per_year: f64,
) -> Result<BacktestReport, BacktestError> {
    if strategy.rebalance_interval == 0 {
        return Err(BacktestError::BadConfig("rebalance_interval must be at least 1".into()));
    }
    if prices.dates.len() < 2 {
        return Err(BacktestError::TooFewRows { need: 2, have: prices.dates.len() });
    }
    let data = to_returns(prices)?;
    if let StrategyKind::DrlPpo { aux: Some(aux), .. } = &strategy.kind {
        if aux.rows() != data.rows() {
            return Err(BacktestError::LengthMismatch {
                context: "auxiliary features",
                left: aux.rows(),
                right: data.rows(),
            });
        }
    }
    // Standardized rows for policy observations, fitted moments from training.
    let std_rows = match &strategy.kind {
        StrategyKind::DrlPpo { norm, .. } => {
            let mut m = Matrix::zeros(data.rows(), data.n_assets());
            for r in 0..data.rows() {
                let z = norm.apply(data.returns.row(r));
                let n = data.n_assets();
                m.as_mut_slice()[r * n..(r + 1) * n].copy_from_slice(&z);
            }
            Some(m)
        }
        _ => None,
    };
    let sim = simulate(&data.returns, mu_cost, initial_wealth, |t, holdings| {
        decide_for(strategy, &data, &std_rows, t, holdings)
    })?;
    let n = data.n_assets();
    let bench = simulate(&data.returns, mu_cost, initial_wealth, |_, _| {
        Ok(Some(WeightVector::uniform(n)))
    })?;
    let mut metrics = compute_metrics(&sim.equity, &bench.equity, periods_per_year)?;
    metrics.turnover = sim.step_turnover.iter().sum::<f64>() / sim.step_turnover.len() as f64;
    metrics.cost_paid = sim.cost_paid;
    let equity = prices.dates.iter().copied().zip(sim.equity).collect::<Vec<_>>();
    Ok(BacktestReport {
        strategy: strategy.name.clone(),
        period: Period {
            start: *prices.dates.first().expect("validated"),
            end: *prices.dates.last().expect("validated"),
        },
        metrics,
        equity,
    })
}

fn unbiased_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Metric suite over an equity curve; `turnover` and `cost_paid` are left
/// zero for the simulator to fill.
///
/// Returns are annualized geometrically, volatility is the unbiased standard
/// deviation of per-period simple returns scaled by `sqrt(periods_per_year)`.
/// Ratios whose denominator is zero come back as `None`.
pub fn compute_metrics(
    equity: &[f64],
    benchmark_equity: &[f64],
    periods_per_year: f64,
) -> Result<Metrics, BacktestError> {
    if equity.len() < 2 {
        return Err(BacktestError::TooFewRows { need: 2, have: equity.len() });
    }
    if equity.len() != benchmark_equity.len() {
        return Err(BacktestError::LengthMismatch {
            context: "benchmark equity",
            left: equity.len(),
            right: benchmark_equity.len(),
        });
    }
    if !(periods_per_year.is_finite() && periods_per_year > 0.0) {
        return Err(BacktestError::BadConfig(format!(
            "periods_per_year must be positive, got {periods_per_year}"
        )));
    }
    for curve in [equity, benchmark_equity] {
        if curve.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(BacktestError::NonPositiveEquity);
        }
    }
    let t = equity.len();
    let q: Vec<f64> = (1..t).map(|i| equity[i] / equity[i - 1] - 1.0).collect();
    let qb: Vec<f64> = (1..t).map(|i| benchmark_equity[i] / benchmark_equity[i - 1] - 1.0).collect();

    let ann_return =
        (equity[t - 1] / equity[0]).powf(periods_per_year / (t - 1) as f64) - 1.0;
    let ann_vol = unbiased_std(&q).map_or(0.0, |s| s * periods_per_year.sqrt());
    let sharpe = if ann_vol > 0.0 { Some(ann_return / ann_vol) } else { None };

    let mut peak = equity[0];
    let mut max_drawdown = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        max_drawdown = max_drawdown.max(1.0 - e / peak);
    }

    let active: Vec<f64> = q.iter().zip(&qb).map(|(a, b)| a - b).collect();
    let info_ratio = match unbiased_std(&active) {
        Some(s) if s > 0.0 => {
            let mean = active.iter().sum::<f64>() / active.len() as f64;
            Some(mean / s * periods_per_year.sqrt())
        }
        _ => None,
    };

    let winning_days = q.iter().filter(|&&x| x > 0.0).count() as f64 / q.len() as f64;

    Ok(Metrics {
        ann_return,
        ann_vol,
        sharpe,
        max_drawdown,
        info_ratio,
        winning_days,
        turnover: 0.0,
        cost_paid: 0.0,
    })
}

const METRIC_ROWS: [&str; 8] = [
    "ann_return",
    "ann_vol",
    "sharpe",
    "max_drawdown",
    "info_ratio",
    "winning_days",
    "turnover",
    "cost_paid",
];

fn metric_value(m: &Metrics, row: &str) -> Option<f64> {
    match row {
        "ann_return" => Some(m.ann_return),
        "ann_vol" => Some(m.ann_vol),
        "sharpe" => m.sharpe,
        "max_drawdown" => Some(m.max_drawdown),
        "info_ratio" => m.info_ratio,
        "winning_days" => Some(m.winning_days),
        "turnover" => Some(m.turnover),
        "cost_paid" => Some(m.cost_paid),
        _ => unreachable!("unknown metric row"),
    }
}

/// Side-by-side metric table, one column per strategy. The TSV uses `NA`
/// for undefined ratios; the JSON uses `null`.
pub fn compare_report(
    reports: &[BacktestReport],
) -> Result<(String, serde_json::Value), BacktestError> {
    if reports.is_empty() {
        return Err(BacktestError::EmptyComparison);
    }
    let mut tsv = String::from("metric");
    for r in reports {
        tsv.push('\t');
        tsv.push_str(&r.strategy);
    }
    tsv.push('\n');
    let mut rows = Vec::with_capacity(METRIC_ROWS.len());
    for row in METRIC_ROWS {
        tsv.push_str(row);
        let mut values = Vec::with_capacity(reports.len());
        for r in reports {
            let v = metric_value(&r.metrics, row);
            tsv.push('\t');
            match v {
                Some(x) => tsv.push_str(&format!("{x}")),
                None => tsv.push_str("NA"),
            }
            values.push(v);
        }
        tsv.push('\n');
        rows.push(serde_json::json!({ "metric": row, "values": values }));
    }
    let json = serde_json::json!({
        "columns": reports.iter().map(|r| r.strategy.clone()).collect::<Vec<_>>(),
        "rows": rows,
    });
    Ok((tsv, json))
}

/// Plot-ready `date<TAB>wealth` series.
pub fn equity_tsv(report: &BacktestReport) -> String {
    let mut out = String::from("date\twealth\n");
    for (d, w) in &report.equity {
        out.push_str(&format!("{d}\t{w}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_net::init_params;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn price_table(rows: &[Vec<f64>]) -> PriceTable {
        let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        PriceTable {
            dates: (0..rows.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            tickers: (0..rows[0].len()).map(|i| format!("T{i}")).collect(),
            close: Matrix::from_rows(rows),
            high: None,
            low: None,
        }
    }

    fn random_prices(rows: usize, n: usize, seed: u64) -> PriceTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![vec![0.0; n]; rows];
        for j in 0..n {
            let mut p = 50.0 + 50.0 * rng.random::<f64>();
            for row in data.iter_mut() {
                row[j] = p;
                p *= 1.0 + (rng.random::<f64>() - 0.5) * 0.04;
            }
        }
        price_table(&data)
    }

    fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> WeightVector {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        WeightVector::new(v).unwrap()
    }

    #[test]
    fn equal_weight_homogeneous_growth() {
        // Both assets gain exactly 10% over the segment.
        let prices = price_table(&[vec![100.0, 50.0], vec![105.0, 52.5], vec![110.0, 55.0]]);
        let strat = equal_weight_strategy(2, 1).unwrap();
        let report = run_strategy(&strat, &prices, 0.0, 1.0, 252.0).unwrap();
        let final_wealth = report.equity.last().unwrap().1;
        assert!((final_wealth - 1.1).abs() < 1e-12, "got {final_wealth}");
    }

    #[test]
    fn buy_and_hold_tracks_the_asset() {
        let prices = random_prices(40, 2, 1);
        let strat = StrategyRef {
            name: "hold_t0".into(),
            kind: StrategyKind::BuyAndHold { weights: WeightVector::one_hot(2, 0) },
            rebalance_interval: 1,
        };
        let report = run_strategy(&strat, &prices, 0.0, 1.0, 252.0).unwrap();
        let p0 = prices.close.get(0, 0);
        for (i, (_, w)) in report.equity.iter().enumerate() {
            let expect = prices.close.get(i, 0) / p0;
            assert!((w - expect).abs() < 1e-12, "step {i}: {w} vs {expect}");
        }
    }

    #[test]
    fn equal_weight_matches_mean_return_product() {
        let prices = random_prices(60, 4, 2);
        let strat = equal_weight_strategy(4, 1).unwrap();
        let report = run_strategy(&strat, &prices, 0.0, 1.0, 252.0).unwrap();
        let returns = to_returns(&prices).unwrap();
        let mut wealth = 1.0;
        for t in 0..returns.rows() {
            let mean = returns.returns.row(t).iter().sum::<f64>() / 4.0;
            wealth *= 1.0 + mean;
        }
        let got = report.equity.last().unwrap().1;
        assert!((got - wealth).abs() < 1e-12, "{got} vs {wealth}");
    }

    #[test]
    fn infinite_interval_pays_cost_once() {
        let prices = random_prices(30, 3, 3);
        let returns = to_returns(&prices).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_simplex(3, &mut rng);
        let mut targets = vec![None; returns.rows()];
        targets[0] = Some(w);
        let out = run_weight_path(&targets, &returns.returns, 0.002, 1.0).unwrap();
        assert!((out.step_turnover[0] - 1.0).abs() < 1e-12);
        assert!(out.step_turnover[1..].iter().all(|&t| t == 0.0));
        assert!((out.cost_paid - 0.002).abs() < 1e-15);

        // Same path through the strategy surface.
        let strat = StrategyRef {
            name: "rarely".into(),
            kind: StrategyKind::MeanVariance { weights: random_simplex(3, &mut rng) },
            rebalance_interval: usize::MAX,
        };
        let report = run_strategy(&strat, &prices, 0.002, 1.0, 252.0).unwrap();
        let steps = returns.rows() as f64;
        assert!((report.metrics.turnover - 1.0 / steps).abs() < 1e-12);
    }

    #[test]
    fn higher_costs_never_help_on_a_fixed_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..25 {
            let prices = random_prices(25, 3, 100 + case);
            let returns = to_returns(&prices).unwrap();
            let targets: Vec<Option<WeightVector>> = (0..returns.rows())
                .map(|t| {
                    if t == 0 || rng.random::<f64>() < 0.4 {
                        Some(random_simplex(3, &mut rng))
                    } else {
                        None
                    }
                })
                .collect();
            let mut prev_final = f64::INFINITY;
            for mu in [0.0, 0.001, 0.01, 0.05, 0.1] {
                let out = run_weight_path(&targets, &returns.returns, mu, 1.0).unwrap();
                let final_wealth = *out.equity.last().unwrap();
                assert!(
                    final_wealth <= prev_final + 1e-12,
                    "case {case}: mu {mu} finished at {final_wealth} > {prev_final}"
                );
                prev_final = final_wealth;
            }
        }
    }

    #[test]
    fn annualization_closed_form() {
        let equity: Vec<f64> = (0..253).map(|i| 1.001f64.powi(i)).collect();
        let m = compute_metrics(&equity, &equity, 252.0).unwrap();
        assert!((m.ann_return - (1.001f64.powi(252) - 1.0)).abs() < 1e-9, "{}", m.ann_return);
        // Rounding leaves at most noise-level volatility on this curve.
        assert!(m.ann_vol < 1e-9);
        assert!(m.info_ratio.is_none());

        // Doublings have period return exactly 1.0, so volatility is exactly
        // zero and the ratio is undefined rather than infinite.
        let doubling: Vec<f64> = (0..20).map(|i| (1u64 << i) as f64).collect();
        let md = compute_metrics(&doubling, &doubling, 252.0).unwrap();
        assert_eq!(md.ann_vol, 0.0);
        assert!(md.sharpe.is_none());
    }

    #[test]
    fn max_drawdown_hand_check() {
        let equity = [1.0, 1.1, 0.99, 1.2];
        let bench = [1.0, 1.0, 1.0, 1.0];
        let m = compute_metrics(&equity, &bench, 252.0).unwrap();
        assert!((m.max_drawdown - 0.1).abs() < 1e-12, "{}", m.max_drawdown);
    }

    #[test]
    fn winning_days_counts_strict_gains() {
        let equity = [1.0, 1.1, 1.045, 1.045];
        let bench = [1.0, 1.01, 1.02, 1.03];
        let m = compute_metrics(&equity, &bench, 252.0).unwrap();
        assert!((m.winning_days - 1.0 / 3.0).abs() < 1e-12);
        assert!(m.info_ratio.is_some());
    }

    #[test]
    fn nondecreasing_curve_has_zero_drawdown() {
        let equity = [1.0, 1.0, 1.2, 1.2, 1.5];
        let bench = [1.0, 1.1, 1.2, 1.3, 1.4];
        let m = compute_metrics(&equity, &bench, 252.0).unwrap();
        assert_eq!(m.max_drawdown, 0.0);
    }

    #[test]
    fn metrics_match_naive_resimulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for case in 0..25 {
            let len = 100;
            let mut equity = vec![1.0 + rng.random::<f64>()];
            let mut bench = vec![1.0 + rng.random::<f64>()];
            for _ in 1..len {
                equity.push(equity.last().unwrap() * (1.0 + (rng.random::<f64>() - 0.5) * 0.1));
                bench.push(bench.last().unwrap() * (1.0 + (rng.random::<f64>() - 0.5) * 0.1));
            }
            let ppy = 252.0;
            let m = compute_metrics(&equity, &bench, ppy).unwrap();

            // Naive loops, no shared code with the implementation.
            let mut q = Vec::new();
            let mut qb = Vec::new();
            for i in 1..len {
                q.push(equity[i] / equity[i - 1] - 1.0);
                qb.push(bench[i] / bench[i - 1] - 1.0);
            }
            let ar = (equity[len - 1] / equity[0]).powf(ppy / (len as f64 - 1.0)) - 1.0;
            let qm = q.iter().sum::<f64>() / q.len() as f64;
            let qv = q.iter().map(|x| (x - qm) * (x - qm)).sum::<f64>() / (q.len() as f64 - 1.0);
            let av = qv.sqrt() * ppy.sqrt();
            let mut mdd = 0.0f64;
            for i in 0..len {
                let peak = equity[..=i].iter().cloned().fold(f64::MIN, f64::max);
                mdd = mdd.max(1.0 - equity[i] / peak);
            }
            let wins = q.iter().filter(|&&x| x > 0.0).count() as f64 / q.len() as f64;
            let d: Vec<f64> = q.iter().zip(&qb).map(|(a, b)| a - b).collect();
            let dm = d.iter().sum::<f64>() / d.len() as f64;
            let dv = d.iter().map(|x| (x - dm) * (x - dm)).sum::<f64>() / (d.len() as f64 - 1.0);
            let ir = dm / dv.sqrt() * ppy.sqrt();

            assert!((m.ann_return - ar).abs() < 1e-12, "case {case} ann_return");
            assert!((m.ann_vol - av).abs() < 1e-12, "case {case} ann_vol");
            assert!((m.sharpe.unwrap() - ar / av).abs() < 1e-12, "case {case} sharpe");
            assert!((m.max_drawdown - mdd).abs() < 1e-12, "case {case} mdd");
            assert!((m.winning_days - wins).abs() < 1e-12, "case {case} wins");
            assert!((m.info_ratio.unwrap() - ir).abs() < 1e-12, "case {case} ir");
        }
    }

    #[test]
    fn metrics_validation() {
        assert!(matches!(
            compute_metrics(&[1.0], &[1.0], 252.0),
            Err(BacktestError::TooFewRows { .. })
        ));
        assert!(matches!(
            compute_metrics(&[1.0, 1.1], &[1.0], 252.0),
            Err(BacktestError::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_metrics(&[1.0, -0.5], &[1.0, 1.0], 252.0),
            Err(BacktestError::NonPositiveEquity)
        ));
        assert!(matches!(
            compute_metrics(&[1.0, 1.1], &[1.0, 1.0], 0.0),
            Err(BacktestError::BadConfig(_))
        ));
    }

    #[test]
    fn path_simulation_guards() {
        let prices = random_prices(10, 2, 7);
        let returns = to_returns(&prices).unwrap();
        let targets = vec![None; returns.rows()];
        assert!(matches!(
            run_weight_path(&targets, &returns.returns, 0.0, 1.0),
            Err(BacktestError::NoInitialAllocation)
        ));
        let short = vec![Some(WeightVector::uniform(2))];
        assert!(matches!(
            run_weight_path(&short, &returns.returns, 0.0, 1.0),
            Err(BacktestError::LengthMismatch { .. })
        ));

        // A crash deep enough that costs exceed the surviving value.
        let crash = price_table(&[vec![100.0, 100.0], vec![0.05, 100.0]]);
        let r = to_returns(&crash).unwrap();
        let t = vec![Some(WeightVector::one_hot(2, 0))];
        assert!(matches!(
            run_weight_path(&t, &r.returns, 0.1, 1.0),
            Err(BacktestError::Ruin { step: 0 })
        ));
    }

    #[test]
    fn mean_variance_finds_the_dominant_asset() {
        // Asset 0: strong drift, low noise. Asset 1: pure noise.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Vec::new();
        for _ in 0..120 {
            rows.push(vec![
                0.004 + 0.002 * (rng.random::<f64>() - 0.5),
                0.02 * (rng.random::<f64>() - 0.5),
            ]);
        }
        let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let train = ReturnMatrix {
            dates: (0..rows.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            tickers: vec!["A".into(), "B".into()],
            returns: Matrix::from_rows(&rows),
        };
        let strat = mean_variance_strategy(&train, 252.0, 4000, 11, 21).unwrap();
        match &strat.kind {
            StrategyKind::MeanVariance { weights } => {
                assert!(
                    weights.as_slice()[0] > 0.8,
                    "weights {:?} not tilted to the dominant asset",
                    weights.as_slice()
                );
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn policy_strategies_run_end_to_end() {
        let prices = random_prices(50, 3, 9);
        let returns = to_returns(&prices).unwrap();
        let norm = Normalization::fit(&returns);
        let lookback = 5;

        let sharpe = StrategyRef {
            name: "sharpe_policy".into(),
            kind: StrategyKind::SharpePolicy {
                params: init_params(&[lookback * 3, 8, 3], 1).unwrap(),
                norm: norm.clone(),
                lookback,
            },
            rebalance_interval: 5,
        };
        let r1 = run_strategy(&sharpe, &prices, 0.001, 1.0, 252.0).unwrap();
        assert!(r1.equity.iter().all(|(_, w)| *w > 0.0));

        let feat_dim = lookback * 3 + 9 + 3;
        let ppo = StrategyRef {
            name: "drl_ppo".into(),
            kind: StrategyKind::DrlPpo {
                actor: init_params(&[feat_dim, 8, 3], 2).unwrap(),
                norm,
                lookback,
                aux: None,
            },
            rebalance_interval: 5,
        };
        let r2 = run_strategy(&ppo, &prices, 0.001, 1.0, 252.0).unwrap();
        assert!(r2.equity.iter().all(|(_, w)| *w > 0.0));
        assert_eq!(r2.equity.len(), prices.dates.len());

        // Deterministic replay.
        let r3 = run_strategy(&ppo, &prices, 0.001, 1.0, 252.0).unwrap();
        assert_eq!(
            r2.equity.iter().map(|e| e.1).collect::<Vec<_>>(),
            r3.equity.iter().map(|e| e.1).collect::<Vec<_>>()
        );
    }

    #[test]
    fn comparison_table_shape_and_na() {
        let equity = [1.0, 1.001, 1.002, 1.003];
        let constant = [1.0, 1.0, 1.0, 1.0];
        let mk = |name: &str, e: &[f64], b: &[f64]| {
            let start = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
            BacktestReport {
                strategy: name.into(),
                period: Period { start, end: start + chrono::Days::new(3) },
                metrics: compute_metrics(e, b, 252.0).unwrap(),
                equity: e
                    .iter()
                    .enumerate()
                    .map(|(i, w)| (start + chrono::Days::new(i as u64), *w))
                    .collect(),
            }
        };
        let flat = mk("flat", &constant, &equity);
        let (tsv, json) = compare_report(&[flat.clone(), flat.clone()]).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 1 + 8);
        assert_eq!(lines[0], "metric\tflat\tflat");
        // Constant curve: sharpe row is NA in both columns.
        let sharpe_line = lines.iter().find(|l| l.starts_with("sharpe\t")).unwrap();
        assert_eq!(*sharpe_line, "sharpe\tNA\tNA");
        assert_eq!(json["columns"].as_array().unwrap().len(), 2);
        assert_eq!(json["rows"].as_array().unwrap().len(), 8);
        assert!(json["rows"][2]["values"][0].is_null());

        assert!(matches!(compare_report(&[]), Err(BacktestError::EmptyComparison)));

        let single = compare_report(&[flat]).unwrap();
        assert_eq!(single.0.lines().next().unwrap(), "metric\tflat");

        let growing = mk("up", &equity, &constant);
        let tsv2 = equity_tsv(&growing);
        assert!(tsv2.starts_with("date\twealth\n2022-01-03\t1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn drawdown_stays_in_unit_range(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut equity = vec![1.0];
            for _ in 0..50 {
                equity.push(equity.last().unwrap() * (1.0 + (rng.random::<f64>() - 0.5) * 0.2));
            }
            let m = compute_metrics(&equity, &equity, 252.0).unwrap();
            prop_assert!((0.0..1.0).contains(&m.max_drawdown));
            prop_assert!((0.0..=1.0).contains(&m.winning_days));
            prop_assert!(m.info_ratio.is_none(), "self-benchmark must have no tracking error");
        }

        #[test]
        fn strategy_reports_have_aligned_dates(seed in 0u64..50) {
            let prices = random_prices(20, 2, 2000 + seed);
            let strat = equal_weight_strategy(2, 3).unwrap();
            let report = run_strategy(&strat, &prices, 0.001, 1.0, 252.0).unwrap();
            prop_assert_eq!(report.equity.len(), 20);
            prop_assert_eq!(report.equity[0].1, 1.0);
            prop_assert_eq!(report.period.start, prices.dates[0]);
            prop_assert_eq!(report.period.end, prices.dates[19]);
        }
    }
}
