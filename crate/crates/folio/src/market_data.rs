//! Daily price ingestion and return construction.
//!
//! Input is a CSV with a `Date` column (ISO-8601, e.g. `2015-01-02`) and one
//! column per ticker; an empty cell marks a missing observation. Optional
//! `_high` / `_low` companion files in the same layout carry intraday ranges.
//! Cleaning forward-fills interior gaps and drops leading rows until every
//! ticker has at least one observation; a cleaned table holds strictly
//! increasing dates and strictly positive, finite prices.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::mat::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Read { path: PathBuf, source: csv::Error },
    #[error("no tickers requested")]
    NoTickers,
    #[error("{path}: no `Date` column in header")]
    MissingDateColumn { path: PathBuf },
    #[error("{path}: ticker column `{ticker}` not found")]
    MissingTickerColumn { path: PathBuf, ticker: String },
    #[error("row {row}: cannot parse date `{value}`")]
    BadDate { row: usize, value: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a price")]
    BadValue { row: usize, column: String, value: String },
    #[error("duplicate rows for date {date}")]
    DuplicateDate { date: NaiveDate },
    #[error("table has no rows")]
    Empty,
    #[error("ticker `{ticker}` has no observations")]
    NoObservations { ticker: String },
    #[error("non-positive or non-finite price {value} for `{ticker}` on {date}")]
    BadPrice { ticker: String, date: NaiveDate, value: f64 },
    #[error("dates must be strictly increasing (violation at {date})")]
    UnsortedDates { date: NaiveDate },
    #[error("companion file {path} does not align with the close table")]
    CompanionMismatch { path: PathBuf },
    #[error("need at least {need} rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("split leaves an empty {segment} segment")]
    EmptySplit { segment: &'static str },
    #[error("rolling window must be at least 2, got {0}")]
    BadWindow(usize),
    #[error("rolling window {window} exceeds row count {rows}")]
    WindowTooLarge { window: usize, rows: usize },
    #[error("seasonal period must be at least 2, got {0}")]
    BadPeriod(usize),
}

/// Aligned close (and optional high/low) prices for a fixed ticker universe.
///
/// Freshly loaded tables may still contain `NaN` holes; [`clean`] removes
/// them and establishes the full invariant set checked by [`PriceTable::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub close: Matrix,
    pub high: Option<Matrix>,
    pub low: Option<Matrix>,
}

impl PriceTable {
    /// Checks the cleaned-table invariants: strictly increasing dates, shapes
    /// consistent, every price strictly positive and finite.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.dates.is_empty() {
            return Err(DataError::Empty);
        }
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(DataError::UnsortedDates { date: w[1] });
            }
        }
        let (t, n) = (self.dates.len(), self.tickers.len());
        for (name, m) in self.panels() {
            assert_eq!((m.rows(), m.cols()), (t, n), "{name} panel shape mismatch");
            for r in 0..t {
                for c in 0..n {
                    let v = m.get(r, c);
                    if !(v.is_finite() && v > 0.0) {
                        return Err(DataError::BadPrice {
                            ticker: self.tickers[c].clone(),
                            date: self.dates[r],
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn panels(&self) -> Vec<(&'static str, &Matrix)> {
        let mut v = vec![("close", &self.close)];
        if let Some(h) = &self.high {
            v.push(("high", h));
        }
        if let Some(l) = &self.low {
            v.push(("low", l));
        }
        v
    }

    /// Latest close per ticker, in ticker order.
    pub fn latest_close(&self) -> Vec<f64> {
        self.close.row(self.dates.len() - 1).to_vec()
    }

    /// Rows `start..end` as a new table.
    pub fn slice_rows(&self, start: usize, end: usize) -> PriceTable {
        PriceTable {
            dates: self.dates[start..end].to_vec(),
            tickers: self.tickers.clone(),
            close: self.close.slice_rows(start, end),
            high: self.high.as_ref().map(|m| m.slice_rows(start, end)),
            low: self.low.as_ref().map(|m| m.slice_rows(start, end)),
        }
    }
}

/// Per-period simple returns `p_t / p_{t-1} - 1`, dated by the later endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Matrix,
}

impl ReturnMatrix {
    pub fn rows(&self) -> usize {
        self.returns.rows()
    }

    pub fn n_assets(&self) -> usize {
        self.returns.cols()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> ReturnMatrix {
        ReturnMatrix {
            dates: self.dates[start..end].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns.slice_rows(start, end),
        }
    }

    /// New matrix keeping the given tickers (by name), columns in the given order.
    pub fn select_tickers(&self, tickers: &[String]) -> Option<ReturnMatrix> {
        let idx: Option<Vec<usize>> = tickers
            .iter()
            .map(|t| self.tickers.iter().position(|u| u == t))
            .collect();
        let idx = idx?;
        Some(ReturnMatrix {
            dates: self.dates.clone(),
            tickers: tickers.to_vec(),
            returns: self.returns.select_columns(&idx),
        })
    }
}

/// Per-asset standardization statistics, fit once on training data and
/// reused verbatim on later segments so evaluation never peeks at its own
/// distribution. A zero-variance column standardizes to zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Column means and unbiased standard deviations. A column with fewer
    /// than two rows or no spread gets std 0, which [`Normalization::apply`]
    /// treats as "emit 0".
    pub fn fit(data: &ReturnMatrix) -> Self {
        let (t, n) = (data.rows(), data.n_assets());
        let mut mean = vec![0.0; n];
        for r in 0..t {
            for (c, v) in data.returns.row(r).iter().enumerate() {
                mean[c] += v;
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        let mut std = vec![0.0; n];
        if t >= 2 {
            for r in 0..t {
                for (c, v) in data.returns.row(r).iter().enumerate() {
                    let d = v - mean[c];
                    std[c] += d * d;
                }
            }
            for s in &mut std {
                *s = (*s / (t - 1) as f64).sqrt();
            }
        }
        Self { mean, std }
    }

    /// Standardizes one row of returns: `(x - mean) / std`, or 0 where the
    /// fitted std vanishes.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| if s > 1e-12 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

/// Chronological split fractions; the test segment takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    train_frac: f64,
    val_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64) -> Result<Self, DataError> {
        for (name, f) in [("train_frac", train_frac), ("val_frac", val_frac)] {
            if !(f.is_finite() && f > 0.0 && f < 1.0) {
                return Err(DataError::BadSplit(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        if train_frac + val_frac >= 1.0 {
            return Err(DataError::BadSplit(format!(
                "train_frac + val_frac must be below 1, got {}",
                train_frac + val_frac
            )));
        }
        Ok(Self { train_frac, val_frac })
    }

    pub fn train_frac(&self) -> f64 {
        self.train_frac
    }

    pub fn val_frac(&self) -> f64 {
        self.val_frac
    }
}

/// Loads one CSV into a (possibly hole-ridden) price table.
///
/// Rows are sorted by date; duplicate dates, unparseable cells, and missing
/// ticker columns are errors. Only the requested tickers are kept, in the
/// requested order.
pub fn load_prices(path: &Path, tickers: &[String]) -> Result<PriceTable, DataError> {
    if tickers.is_empty() {
        return Err(DataError::NoTickers);
    }
    let mut uniq = HashSet::new();
    for t in tickers {
        if !uniq.insert(t.as_str()) {
            return Err(DataError::BadSplit(format!("ticker `{t}` requested twice")));
        }
    }

    let read_err = |source| DataError::Read { path: path.to_path_buf(), source };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_err)?;
    let headers = rdr.headers().map_err(read_err)?.clone();

    let date_col = headers
        .iter()
        .position(|h| h == "Date")
        .ok_or_else(|| DataError::MissingDateColumn { path: path.to_path_buf() })?;
    let ticker_cols: Vec<usize> = tickers
        .iter()
        .map(|t| {
            headers.iter().position(|h| h == t).ok_or_else(|| DataError::MissingTickerColumn {
                path: path.to_path_buf(),
                ticker: t.clone(),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header row
        let record = record.map_err(read_err)?;
        let raw_date = record.get(date_col).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| DataError::BadDate { row: row_no, value: raw_date.to_string() })?;
        let mut vals = Vec::with_capacity(tickers.len());
        for (t, &c) in tickers.iter().zip(&ticker_cols) {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                vals.push(f64::NAN);
            } else {
                let v: f64 = cell.parse().map_err(|_| DataError::BadValue {
                    row: row_no,
                    column: t.clone(),
                    value: cell.to_string(),
                })?;
                vals.push(v);
            }
        }
        rows.push((date, vals));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(DataError::DuplicateDate { date: w[0].0 });
        }
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|(d, _)| *d).collect();
    let values: Vec<Vec<f64>> = rows.into_iter().map(|(_, v)| v).collect();
    Ok(PriceTable {
        dates,
        tickers: tickers.to_vec(),
        close: Matrix::from_rows(&values),
        high: None,
        low: None,
    })
}

/// Loads a close CSV plus `_high` / `_low` companion files when both exist
/// next to it (`prices.csv` -> `prices_high.csv`, `prices_low.csv`).
/// Companions must carry identical dates.
pub fn load_dataset(path: &Path, tickers: &[String]) -> Result<PriceTable, DataError> {
    let mut table = load_prices(path, tickers)?;
    let companion = |suffix: &str| -> PathBuf {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = path.extension().map(|s| s.to_string_lossy().into_owned());
        let name = match ext {
            Some(e) => format!("{stem}{suffix}.{e}"),
            None => format!("{stem}{suffix}"),
        };
        path.with_file_name(name)
    };
    let high_path = companion("_high");
    let low_path = companion("_low");
    if high_path.is_file() && low_path.is_file() {
        for (p, slot) in [(&high_path, 0usize), (&low_path, 1)] {
            let aux = load_prices(p, tickers)?;
            if aux.dates != table.dates {
                return Err(DataError::CompanionMismatch { path: p.clone() });
            }
            if slot == 0 {
                table.high = Some(aux.close);
            } else {
                table.low = Some(aux.close);
            }
        }
    }
    Ok(table)
}

/// Forward-fills interior gaps, drops leading rows until every ticker has a
/// value, and validates the result. A ticker with zero observations is an
/// error, as is any non-positive filled price.
pub fn clean(raw: PriceTable) -> Result<PriceTable, DataError> {
    if raw.dates.is_empty() {
        return Err(DataError::Empty);
    }
    for (c, ticker) in raw.tickers.iter().enumerate() {
        if (0..raw.close.rows()).all(|r| raw.close.get(r, c).is_nan()) {
            return Err(DataError::NoObservations { ticker: ticker.clone() });
        }
    }

    let mut close = raw.close;
    let mut high = raw.high;
    let mut low = raw.low;
    for m in [Some(&mut close), high.as_mut(), low.as_mut()].into_iter().flatten() {
        forward_fill(m);
    }

    // After forward-filling, completeness is monotone: once every column has
    // seen a value, all later rows are complete.
    let panels: Vec<&Matrix> = [Some(&close), high.as_ref(), low.as_ref()].into_iter().flatten().collect();
    let first_complete = (0..close.rows())
        .find(|&r| panels.iter().all(|m| m.row(r).iter().all(|v| !v.is_nan())))
        .ok_or(DataError::Empty)?;

    let table = PriceTable {
        dates: raw.dates[first_complete..].to_vec(),
        tickers: raw.tickers,
        close: close.slice_rows(first_complete, close.rows()),
        high: high.as_ref().map(|m| m.slice_rows(first_complete, m.rows())),
        low: low.as_ref().map(|m| m.slice_rows(first_complete, m.rows())),
    };
    table.validate()?;
    Ok(table)
}

fn forward_fill(m: &mut Matrix) {
    for c in 0..m.cols() {
        let mut last = f64::NAN;
        for r in 0..m.rows() {
            let v = m.get(r, c);
            if v.is_nan() {
                if !last.is_nan() {
                    m.set(r, c, last);
                }
            } else {
                last = v;
            }
        }
    }
}

/// Simple returns from a cleaned table: `r[t][i] = p[t+1][i] / p[t][i] - 1`,
/// dated by the later endpoint. Needs at least two rows.
pub fn to_returns(prices: &PriceTable) -> Result<ReturnMatrix, DataError> {
    let t = prices.dates.len();
    if t < 2 {
        return Err(DataError::TooFewRows { need: 2, have: t });
    }
    prices.validate()?;
    let n = prices.tickers.len();
    let mut out = Matrix::zeros(t - 1, n);
    for r in 0..t - 1 {
        for c in 0..n {
            out.set(r, c, prices.close.get(r + 1, c) / prices.close.get(r, c) - 1.0);
        }
    }
    Ok(ReturnMatrix {
        dates: prices.dates[1..].to_vec(),
        tickers: prices.tickers.clone(),
        returns: out,
    })
}

/// Chronological train/validation/test split: `floor(train_frac * T)` rows,
/// then `floor(val_frac * T)`, then the remainder. Every segment must be
/// non-empty.
pub fn chrono_split(
    data: &ReturnMatrix,
    spec: &SplitSpec,
) -> Result<(ReturnMatrix, ReturnMatrix, ReturnMatrix), DataError> {
    let t = data.rows();
    let n_train = (spec.train_frac * t as f64).floor() as usize;
    let n_val = (spec.val_frac * t as f64).floor() as usize;
    if n_train == 0 {
        return Err(DataError::EmptySplit { segment: "train" });
    }
    if n_val == 0 {
        return Err(DataError::EmptySplit { segment: "validation" });
    }
    if n_train + n_val >= t {
        return Err(DataError::EmptySplit { segment: "test" });
    }
    Ok((
        data.slice_rows(0, n_train),
        data.slice_rows(n_train, n_train + n_val),
        data.slice_rows(n_train + n_val, t),
    ))
}

/// Rolling mean and unbiased standard deviation over a trailing window.
/// Output has `T - window + 1` rows; window must be at least 2 and at most `T`.
pub fn rolling_stats(series: &ReturnMatrix, window: usize) -> Result<(Matrix, Matrix), DataError> {
    if window < 2 {
        return Err(DataError::BadWindow(window));
    }
    let t = series.rows();
    if window > t {
        return Err(DataError::WindowTooLarge { window, rows: t });
    }
    let n = series.n_assets();
    let out_rows = t - window + 1;
    let mut means = Matrix::zeros(out_rows, n);
    let mut stds = Matrix::zeros(out_rows, n);
    for r in 0..out_rows {
        for c in 0..n {
            let mut sum = 0.0;
            for k in 0..window {
                sum += series.returns.get(r + k, c);
            }
            let mean = sum / window as f64;
            let mut ss = 0.0;
            for k in 0..window {
                let d = series.returns.get(r + k, c) - mean;
                ss += d * d;
            }
            means.set(r, c, mean);
            stds.set(r, c, (ss / (window - 1) as f64).sqrt());
        }
    }
    Ok((means, stds))
}

/// Removes an additive periodic component per column: subtracts each phase's
/// mean and adds back the column mean, so the column mean is untouched and a
/// second pass is a no-op. Needs at least two full cycles.
pub fn seasonal_adjust(series: &ReturnMatrix, period: usize) -> Result<ReturnMatrix, DataError> {
    if period < 2 {
        return Err(DataError::BadPeriod(period));
    }
    let t = series.rows();
    if t < 2 * period {
        return Err(DataError::TooFewRows { need: 2 * period, have: t });
    }
    let n = series.n_assets();
    let mut out = series.returns.clone();
    for c in 0..n {
        let mut phase_sum = vec![0.0; period];
        let mut phase_count = vec![0usize; period];
        let mut total = 0.0;
        for r in 0..t {
            phase_sum[r % period] += series.returns.get(r, c);
            phase_count[r % period] += 1;
            total += series.returns.get(r, c);
        }
        let col_mean = total / t as f64;
        let phase_mean: Vec<f64> =
            phase_sum.iter().zip(&phase_count).map(|(s, &k)| s / k as f64).collect();
        for r in 0..t {
            let v = series.returns.get(r, c) - (phase_mean[r % period] - col_mean);
            out.set(r, c, v);
        }
    }
    Ok(ReturnMatrix { dates: series.dates.clone(), tickers: series.tickers.clone(), returns: out })
}
