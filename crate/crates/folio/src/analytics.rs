//! Portfolio analytics: moment estimation, long-only frontier sampling,
//! exhaustive subset search, and integer share allocation.
//!
//! Frontier exploration samples weight vectors uniformly from the simplex
//! (symmetric Dirichlet, unit concentration). Every draw derives its own seed
//! from `(seed, sample index)`, so sampling parallelizes without changing
//! results and the subset search can replay the identical draw sequence on
//! every candidate universe for a like-for-like comparison.

use itertools::Itertools;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::exec;
use crate::market_data::ReturnMatrix;
use crate::mat::Matrix;

/// Tolerance for the simplex sum constraint.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Radicand floor: portfolio variance this far below zero is a data error,
/// anything closer is rounding noise and clamps to zero.
const PSD_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tickers do not match between inputs")]
    MisalignedUniverse,
    #[error("need at least {need} return rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("periods_per_year must be positive and finite, got {0}")]
    BadPeriodsPerYear(f64),
    #[error("invalid weight vector: {0}")]
    BadWeights(String),
    #[error("portfolio variance {0} is negative beyond tolerance; covariance is not positive semi-definite")]
    NotPsd(f64),
    #[error("need at least two assets, got {0}")]
    TooFewAssets(usize),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("no frontier points given")]
    EmptyFrontier,
    #[error("every frontier point has zero risk; Sharpe ratio is undefined")]
    AllZeroRisk,
    #[error("subset size {k} invalid for {n} assets (need 2 <= k <= n)")]
    BadSubsetSize { k: usize, n: usize },
    #[error("{combos} subsets exceed the enumeration limit of {limit}")]
    TooManySubsets { combos: u128, limit: u128 },
    #[error("budget must be non-negative and finite, got {0}")]
    BadBudget(f64),
    #[error("price for `{ticker}` must be positive and finite, got {price}")]
    BadPrice { ticker: String, price: f64 },
}

/// Long-only portfolio weights: every entry in [0, 1], summing to 1 within
/// [`SIMPLEX_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, AnalyticsError> {
        if weights.is_empty() {
            return Err(AnalyticsError::BadWeights("empty weight vector".into()));
        }
        let mut sum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(AnalyticsError::BadWeights(format!(
                    "entry {i} is {w}, outside [0, 1]"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(AnalyticsError::BadWeights(format!("entries sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Equal weights `1/n`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform weights need at least one asset");
        Self(vec![1.0 / n as f64; n])
    }

    /// All mass on asset `i`.
    pub fn one_hot(n: usize, i: usize) -> Self {
        assert!(i < n, "one-hot index out of range");
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Annualized mean returns per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedReturns {
    pub tickers: Vec<String>,
    pub mu: Vec<f64>,
}

/// Annualized covariance of asset returns; symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub tickers: Vec<String>,
    pub cov: Matrix,
}

impl CovMatrix {
    /// Checks symmetry (within 1e-12) and non-negative diagonal.
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let n = self.tickers.len();
        if self.cov.rows() != n || self.cov.cols() != n {
            return Err(AnalyticsError::DimensionMismatch { expected: n, got: self.cov.rows() });
        }
        for i in 0..n {
            if self.cov.get(i, i) < 0.0 {
                return Err(AnalyticsError::NotPsd(self.cov.get(i, i)));
            }
            for j in 0..i {
                let d = (self.cov.get(i, j) - self.cov.get(j, i)).abs();
                if d > 1e-12 {
                    return Err(AnalyticsError::BadWeights(format!(
                        "covariance asymmetric at ({i}, {j}) by {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One sampled portfolio on the risk/return plane.
///
/// `sharpe = expected_return / risk` when `risk > 0`; a zero-risk point has
/// no defined Sharpe ratio and carries `NaN`, which [`max_sharpe`] skips.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub expected_return: f64,
    pub risk: f64,
    pub sharpe: f64,
    pub weights: WeightVector,
}

/// Result of the exhaustive subset search.
#[derive(Debug, Clone)]
pub struct SubsetSearch {
    pub tickers: Vec<String>,
    pub best: FrontierPoint,
    pub subsets_examined: usize,
}

fn check_ppy(periods_per_year: f64) -> Result<(), AnalyticsError> {
    if periods_per_year.is_finite() && periods_per_year > 0.0 {
        Ok(())
    } else {
        Err(AnalyticsError::BadPeriodsPerYear(periods_per_year))
    }
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let (t, n) = (m.rows(), m.cols());
    let mut means = vec![0.0; n];
    for r in 0..t {
        for (c, v) in m.row(r).iter().enumerate() {
            means[c] += v;
        }
    }
    for mu in &mut means {
        *mu /= t as f64;
    }
    means
}

fn covariance_of(m: &Matrix, periods_per_year: f64) -> Matrix {
    let (t, n) = (m.rows(), m.cols());
    let means = column_means(m);
    let mut cov = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for r in 0..t {
                s += (m.get(r, i) - means[i]) * (m.get(r, j) - means[j]);
            }
            let v = s / (t - 1) as f64 * periods_per_year;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

/// Annualized mean return per asset: column mean times `periods_per_year`.
pub fn expected_returns(
    returns: &ReturnMatrix,
    periods_per_year: f64,
) -> Result<ExpectedReturns, AnalyticsError> {
    check_ppy(periods_per_year)?;
    if returns.rows() == 0 {
        return Err(AnalyticsError::TooFewRows { need: 1, have: 0 });
    }
    let mu = column_means(&returns.returns).into_iter().map(|m| m * periods_per_year).collect();
    Ok(ExpectedReturns { tickers: returns.tickers.clone(), mu })
}

/// Annualized unbiased sample covariance (two-pass, `n - 1` denominator).
pub fn covariance(
    returns: &ReturnMatrix,
    periods_per_year: f64,
) -> Result<CovMatrix, AnalyticsError> {
    check_ppy(periods_per_year)?;
    let t = returns.rows();
    if t < 2 {
        return Err(AnalyticsError::TooFewRows { need: 2, have: t });
    }
    Ok(CovMatrix {
        tickers: returns.tickers.clone(),
        cov: covariance_of(&returns.returns, periods_per_year),
    })
}

/// Portfolio expected return: `w . mu`.
pub fn portfolio_return(mu: &ExpectedReturns, w: &WeightVector) -> Result<f64, AnalyticsError> {
    if mu.mu.len() != w.len() {
        return Err(AnalyticsError::DimensionMismatch { expected: mu.mu.len(), got: w.len() });
    }
    Ok(dot(&mu.mu, w.as_slice()))
}

/// Portfolio volatility: square root of the full quadratic form
/// `sum_i sum_j w_i w_j cov_ij` (diagonal variances plus all cross terms).
/// A radicand within [`PSD_TOL`] of zero clamps to zero; further below is an
/// error.
pub fn portfolio_risk(cov: &CovMatrix, w: &WeightVector) -> Result<f64, AnalyticsError> {
    if cov.cov.rows() != w.len() {
        return Err(AnalyticsError::DimensionMismatch { expected: cov.cov.rows(), got: w.len() });
    }
    risk_of(&cov.cov, w.as_slice())
}

fn risk_of(cov: &Matrix, w: &[f64]) -> Result<f64, AnalyticsError> {
    let n = w.len();
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += w[i] * w[j] * cov.get(i, j);
        }
    }
    if var < -PSD_TOL {
        return Err(AnalyticsError::NotPsd(var));
    }
    Ok(var.max(0.0).sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn point_from_weights(
    mu: &[f64],
    cov: &Matrix,
    weights: WeightVector,
) -> Result<FrontierPoint, AnalyticsError> {
    let expected_return = dot(mu, weights.as_slice());
    let risk = risk_of(cov, weights.as_slice())?;
    let sharpe = if risk > 0.0 { expected_return / risk } else { f64::NAN };
    Ok(FrontierPoint { expected_return, risk, sharpe, weights })
}

fn draw_weights(n: usize, seed: u64) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; n];
    let mut sum = 0.0;
    for wi in &mut w {
        let e: f64 = rng.sample(Exp1);
        *wi = e;
        sum += e;
    }
    if sum <= 0.0 {
        return WeightVector::uniform(n);
    }
    for wi in &mut w {
        *wi /= sum;
    }
    // Normalized positive draws sum to 1 at machine precision.
    WeightVector::new(w).expect("normalized draw is on the simplex")
}

fn check_universe(mu: &ExpectedReturns, cov: &CovMatrix) -> Result<usize, AnalyticsError> {
    if mu.tickers != cov.tickers {
        return Err(AnalyticsError::MisalignedUniverse);
    }
    let n = mu.mu.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewAssets(n));
    }
    if cov.cov.rows() != n {
        return Err(AnalyticsError::DimensionMismatch { expected: n, got: cov.cov.rows() });
    }
    Ok(n)
}

/// One seeded frontier draw: a uniform simplex weight vector evaluated on
/// `(mu, cov)`. Building block for [`sample_frontier`]; exposed so callers
/// (and benchmarks) can drive the sampling loop themselves.
pub fn frontier_draw(
    mu: &ExpectedReturns,
    cov: &CovMatrix,
    seed: u64,
) -> Result<FrontierPoint, AnalyticsError> {
    let n = check_universe(mu, cov)?;
    point_from_weights(&mu.mu, &cov.cov, draw_weights(n, seed))
}

/// Samples `n_samples` long-only portfolios uniformly from the simplex and
/// evaluates each. Draw `i` uses the seed derived from `(seed, i)`, so output
/// is deterministic for a fixed seed and identical whether the loop runs
/// parallel or sequential.
pub fn sample_frontier(
    mu: &ExpectedReturns,
    cov: &CovMatrix,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FrontierPoint>, AnalyticsError> {
    let n = check_universe(mu, cov)?;
    if n_samples == 0 {
        return Err(AnalyticsError::NoSamples);
    }
    let points = exec::map_indexed(n_samples, |i| {
        let s = exec::derive_seed(seed, "frontier", i as u64);
        point_from_weights(&mu.mu, &cov.cov, draw_weights(n, s))
    });
    points.into_iter().collect()
}

fn strictly_better(a: &FrontierPoint, b: &FrontierPoint) -> bool {
    if a.sharpe != b.sharpe {
        return a.sharpe > b.sharpe;
    }
    if a.risk != b.risk {
        return a.risk < b.risk;
    }
    for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Highest-Sharpe point. Ties break toward lower risk, then the
/// lexicographically smaller weight vector, making the choice independent of
/// input order. Zero-risk points (undefined Sharpe) are skipped; if nothing
/// else remains that is an error.
pub fn max_sharpe(points: &[FrontierPoint]) -> Result<FrontierPoint, AnalyticsError> {
    if points.is_empty() {
        return Err(AnalyticsError::EmptyFrontier);
    }
    let mut best: Option<&FrontierPoint> = None;
    for p in points {
        if !p.sharpe.is_finite() {
            continue;
        }
        match best {
            None => best = Some(p),
            Some(b) if strictly_better(p, b) => best = Some(p),
            _ => {}
        }
    }
    best.cloned().ok_or(AnalyticsError::AllZeroRisk)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Enumeration limit for [`select_best_subset`].
pub const MAX_SUBSETS: u128 = 1_000_000;

/// Exhaustively evaluates every `k`-subset of the universe: each candidate
/// gets its own sampled frontier using the *same* seed (identical simplex
/// draws, so no subset is luckier than another) and is scored by its
/// max-Sharpe point. Subsets are enumerated in lexicographic ticker order;
/// equal scores keep the earlier subset. `C(n, k)` must not exceed
/// [`MAX_SUBSETS`].
pub fn select_best_subset(
    returns: &ReturnMatrix,
    k: usize,
    n_samples: usize,
    periods_per_year: f64,
    seed: u64,
) -> Result<SubsetSearch, AnalyticsError> {
    check_ppy(periods_per_year)?;
    let n = returns.n_assets();
    if k < 2 || k > n {
        return Err(AnalyticsError::BadSubsetSize { k, n });
    }
    if returns.rows() < 2 {
        return Err(AnalyticsError::TooFewRows { need: 2, have: returns.rows() });
    }
    if n_samples == 0 {
        return Err(AnalyticsError::NoSamples);
    }
    let combos_count = binomial(n, k);
    if combos_count > MAX_SUBSETS {
        return Err(AnalyticsError::TooManySubsets { combos: combos_count, limit: MAX_SUBSETS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| returns.tickers[a].cmp(&returns.tickers[b]));
    let combos: Vec<Vec<usize>> = order.into_iter().combinations(k).collect();
    debug_assert_eq!(combos.len() as u128, combos_count);

    let evaluated: Vec<Result<FrontierPoint, AnalyticsError>> =
        exec::map_indexed(combos.len(), |ci| {
            let sub = returns.returns.select_columns(&combos[ci]);
            let mu: Vec<f64> =
                column_means(&sub).into_iter().map(|m| m * periods_per_year).collect();
            let cov = covariance_of(&sub, periods_per_year);
            let mut best: Option<FrontierPoint> = None;
            for i in 0..n_samples {
                let s = exec::derive_seed(seed, "frontier", i as u64);
                let p = point_from_weights(&mu, &cov, draw_weights(k, s))?;
                if !p.sharpe.is_finite() {
                    continue;
                }
                match &best {
                    None => best = Some(p),
                    Some(b) if strictly_better(&p, b) => best = Some(p),
                    _ => {}
                }
            }
            best.ok_or(AnalyticsError::AllZeroRisk)
        });

    let mut winner: Option<(usize, FrontierPoint)> = None;
    for (ci, res) in evaluated.into_iter().enumerate() {
        let point = res?;
        let replace = match &winner {
            None => true,
            Some((_, b)) => point.sharpe > b.sharpe,
        };
        if replace {
            winner = Some((ci, point));
        }
    }
    let (ci, best) = winner.expect("at least one subset exists");
    Ok(SubsetSearch {
        tickers: combos[ci].iter().map(|&c| returns.tickers[c].clone()).collect(),
        best,
        subsets_examined: combos.len(),
    })
}

/// Integer share counts for deploying `budget` at `prices` close to the
/// target weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    /// `(ticker, shares)` in input ticker order.
    pub shares: Vec<(String, u64)>,
    pub leftover: f64,
}

impl AllocationPlan {
    pub fn shares_for(&self, ticker: &str) -> Option<u64> {
        self.shares.iter().find(|(t, _)| t == ticker).map(|&(_, s)| s)
    }
}

/// Floor pass then greedy refinement: start from `floor(w_i * budget / p_i)`
/// shares, then repeatedly buy one share of the affordable asset with the
/// largest value deficit `w_i * budget - shares_i * p_i` (ties go to the
/// earlier ticker) until nothing is affordable. Leftover is recomputed as
/// `budget - invested` after every purchase, so invested + leftover equals
/// the budget exactly.
pub fn discrete_allocation(
    w: &WeightVector,
    tickers: &[String],
    latest_prices: &[f64],
    budget: f64,
) -> Result<AllocationPlan, AnalyticsError> {
    let n = w.len();
    if tickers.len() != n {
        return Err(AnalyticsError::DimensionMismatch { expected: n, got: tickers.len() });
    }
    if latest_prices.len() != n {
        return Err(AnalyticsError::DimensionMismatch { expected: n, got: latest_prices.len() });
    }
    if !budget.is_finite() || budget < 0.0 {
        return Err(AnalyticsError::BadBudget(budget));
    }
    for (t, &p) in tickers.iter().zip(latest_prices) {
        if !p.is_finite() || p <= 0.0 {
            return Err(AnalyticsError::BadPrice { ticker: t.clone(), price: p });
        }
    }

    let targets: Vec<f64> = w.as_slice().iter().map(|wi| wi * budget).collect();
    let mut shares: Vec<u64> =
        targets.iter().zip(latest_prices).map(|(v, p)| (v / p).floor() as u64).collect();

    let invested_of = |shares: &[u64]| -> f64 {
        shares.iter().zip(latest_prices).map(|(&s, &p)| s as f64 * p).sum()
    };

    // Floating-point rounding can push the floor pass a hair over budget;
    // give back the most overbought share until affordable again.
    while budget - invested_of(&shares) < 0.0 {
        let worst = (0..n)
            .filter(|&i| shares[i] > 0)
            .max_by(|&a, &b| {
                let oa = shares[a] as f64 * latest_prices[a] - targets[a];
                let ob = shares[b] as f64 * latest_prices[b] - targets[b];
                oa.partial_cmp(&ob).unwrap()
            })
            .expect("overspent with zero shares");
        shares[worst] -= 1;
    }

    loop {
        let leftover = budget - invested_of(&shares);
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..n {
            if latest_prices[i] > leftover {
                continue;
            }
            let deficit = targets[i] - shares[i] as f64 * latest_prices[i];
            match pick {
                None => pick = Some((i, deficit)),
                Some((_, d)) if deficit > d => pick = Some((i, deficit)),
                _ => {}
            }
        }
        match pick {
            Some((i, _)) => shares[i] += 1,
            None => break,
        }
    }

    let leftover = budget - invested_of(&shares);
    Ok(AllocationPlan {
        shares: tickers.iter().cloned().zip(shares).collect(),
        leftover,
    })
}
