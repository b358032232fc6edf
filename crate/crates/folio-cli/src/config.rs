//! Flat `key = value` run configuration.
//!
//! One file drives the whole pipeline. Unknown keys are errors rather than
//! warnings so typos cannot silently fall back to defaults, and every run
//! echoes its fully resolved configuration to `<out>/resolved.conf`; feeding
//! that file back reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use folio::sharpe_trainer::OptimizerKind;

/// Strategy identifiers accepted by the `strategies` key.
pub const KNOWN_STRATEGIES: [&str; 5] =
    ["equal_weight", "mean_variance", "buy_and_hold", "sharpe_policy", "drl_ppo"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub tickers: Vec<String>,
    pub out: PathBuf,
    pub seed: u64,

    pub train_frac: f64,
    pub val_frac: f64,
    pub periods_per_year: f64,

    pub frontier_samples: usize,
    pub subset_k: usize,
    pub subset_samples: usize,
    pub budget: Option<f64>,

    pub mu_cost: f64,
    pub lookback: usize,
    pub episode_len: usize,
    pub action_interval: usize,
    pub rebalance_interval: usize,
    pub initial_wealth: f64,
    pub use_aux: bool,

    pub alpha: f64,
    pub epochs: usize,
    pub trading_len: usize,
    pub eps_vol: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,

    pub ppo_iters: usize,
    pub episodes_per_iter: usize,
    pub clip_eps: f64,
    pub gamma: f64,
    pub lam: f64,
    pub update_epochs: usize,
    pub minibatch: usize,
    pub ppo_lr: f64,
    pub grad_clip: f64,
    pub ppo_hidden: Vec<usize>,

    pub strategies: Vec<String>,
}

/// Every key the parser accepts, in echo order.
const KEYS: [&str; 36] = [
    "data",
    "tickers",
    "out",
    "seed",
    "train_frac",
    "val_frac",
    "periods_per_year",
    "frontier_samples",
    "subset_k",
    "subset_samples",
    "budget",
    "mu_cost",
    "lookback",
    "episode_len",
    "action_interval",
    "rebalance_interval",
    "initial_wealth",
    "use_aux",
    "alpha",
    "epochs",
    "trading_len",
    "eps_vol",
    "weight_decay",
    "hidden",
    "optimizer",
    "ppo_iters",
    "episodes_per_iter",
    "clip_eps",
    "gamma",
    "lam",
    "update_epochs",
    "minibatch",
    "ppo_lr",
    "grad_clip",
    "ppo_hidden",
    "strategies",
];

fn parse_kv_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin} line {}: expected `key = value`, got `{line}`", i + 1))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            bail!("{origin} line {}: key `{key}` set twice", i + 1);
        }
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| anyhow!("{key}: cannot parse `{v}`")),
    }
}

fn parse_list(map: &BTreeMap<String, String>, key: &str, default: &[usize]) -> Result<Vec<usize>> {
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| anyhow!("{key}: cannot parse `{s}` as a layer width")))
            .collect(),
    }
}

fn parse_names(map: &BTreeMap<String, String>, key: &str, default: &[&str]) -> Vec<String> {
    match map.get(key) {
        None => default.iter().map(|s| s.to_string()).collect(),
        Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
    }
}

impl RunConfig {
    /// Builds a validated config from an optional file plus `key=value`
    /// overrides (later overrides win). Either source may supply the
    /// required keys.
    pub fn from_sources(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                parse_kv_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        for key in map.keys() {
            if !KEYS.contains(&key.as_str()) {
                bail!("unknown config key `{key}`");
            }
        }

        let data = PathBuf::from(
            map.get("data").ok_or_else(|| anyhow!("missing required config key `data`"))?,
        );
        let tickers: Vec<String> = map
            .get("tickers")
            .ok_or_else(|| anyhow!("missing required config key `tickers`"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if tickers.is_empty() {
            bail!("tickers must list at least one symbol");
        }

        let cfg = Self {
            data,
            tickers,
            out: PathBuf::from(map.get("out").map(String::as_str).unwrap_or("out")),
            seed: parse_num(&map, "seed", 42u64)?,
            train_frac: parse_num(&map, "train_frac", 0.7)?,
            val_frac: parse_num(&map, "val_frac", 0.15)?,
            periods_per_year: parse_num(&map, "periods_per_year", 252.0)?,
            frontier_samples: parse_num(&map, "frontier_samples", 10_000)?,
            subset_k: parse_num(&map, "subset_k", 5)?,
            subset_samples: parse_num(&map, "subset_samples", 2_000)?,
            budget: map
                .get("budget")
                .map(|v| v.parse().map_err(|_| anyhow!("budget: cannot parse `{v}`")))
                .transpose()?,
            mu_cost: parse_num(&map, "mu_cost", 0.001)?,
            lookback: parse_num(&map, "lookback", 20)?,
            episode_len: parse_num(&map, "episode_len", 126)?,
            action_interval: parse_num(&map, "action_interval", 21)?,
            rebalance_interval: parse_num(&map, "rebalance_interval", 21)?,
            initial_wealth: parse_num(&map, "initial_wealth", 1.0)?,
            use_aux: parse_num(&map, "use_aux", false)?,
            alpha: parse_num(&map, "alpha", 0.01)?,
            epochs: parse_num(&map, "epochs", 200)?,
            trading_len: parse_num(&map, "trading_len", 252)?,
            eps_vol: parse_num(&map, "eps_vol", 1e-8)?,
            weight_decay: parse_num(&map, "weight_decay", 0.0)?,
            hidden: parse_list(&map, "hidden", &[64, 64])?,
            optimizer: match map.get("optimizer").map(String::as_str).unwrap_or("gradient_ascent") {
                "gradient_ascent" => OptimizerKind::GradientAscent,
                "adam" => OptimizerKind::Adam,
                other => bail!("optimizer must be `gradient_ascent` or `adam`, got `{other}`"),
            },
            ppo_iters: parse_num(&map, "ppo_iters", 100)?,
            episodes_per_iter: parse_num(&map, "episodes_per_iter", 8)?,
            clip_eps: parse_num(&map, "clip_eps", 0.2)?,
            gamma: parse_num(&map, "gamma", 0.99)?,
            lam: parse_num(&map, "lam", 0.95)?,
            update_epochs: parse_num(&map, "update_epochs", 4)?,
            minibatch: parse_num(&map, "minibatch", 64)?,
            ppo_lr: parse_num(&map, "ppo_lr", 3e-4)?,
            grad_clip: parse_num(&map, "grad_clip", 0.5)?,
            ppo_hidden: parse_list(&map, "ppo_hidden", &[64, 64])?,
            strategies: parse_names(&map, "strategies", &["equal_weight", "mean_variance"]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("periods_per_year", self.periods_per_year),
            ("initial_wealth", self.initial_wealth),
            ("alpha", self.alpha),
            ("eps_vol", self.eps_vol),
            ("ppo_lr", self.ppo_lr),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be positive, got {v}");
            }
        }
        for (name, v) in [("train_frac", self.train_frac), ("val_frac", self.val_frac)] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                bail!("{name} must lie in (0, 1), got {v}");
            }
        }
        if self.train_frac + self.val_frac >= 1.0 {
            bail!(
                "train_frac + val_frac = {}: no test segment",
                self.train_frac + self.val_frac
            );
        }
        if !(0.0..=0.1).contains(&self.mu_cost) || !self.mu_cost.is_finite() {
            bail!("mu_cost out of range [0, 0.1]");
        }
        if let Some(b) = self.budget {
            if !(b.is_finite() && b >= 0.0) {
                bail!("budget must be non-negative, got {b}");
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            bail!("weight_decay must be non-negative, got {}", self.weight_decay);
        }
        if self.frontier_samples == 0 {
            bail!("frontier_samples must be at least 1");
        }
        if self.subset_samples == 0 {
            bail!("subset_samples must be at least 1");
        }
        if self.subset_k < 2 {
            bail!("subset_k must be at least 2, got {}", self.subset_k);
        }
        if self.lookback == 0 {
            bail!("lookback must be at least 1");
        }
        if self.episode_len < 2 {
            bail!("episode_len must be at least 2, got {}", self.episode_len);
        }
        if self.action_interval == 0 {
            bail!("action_interval must be at least 1");
        }
        if self.rebalance_interval == 0 {
            bail!("rebalance_interval must be at least 1");
        }
        if self.trading_len < 2 {
            bail!("trading_len must be at least 2, got {}", self.trading_len);
        }
        for (name, layers) in [("hidden", &self.hidden), ("ppo_hidden", &self.ppo_hidden)] {
            if layers.iter().any(|&w| w == 0) {
                bail!("{name} layer widths must be positive");
            }
        }
        if !(self.clip_eps.is_finite() && self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            bail!("clip_eps must lie in (0, 1), got {}", self.clip_eps);
        }
        for (name, v) in [("gamma", self.gamma), ("lam", self.lam)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                bail!("{name} must lie in [0, 1], got {v}");
            }
        }
        if self.update_epochs == 0 {
            bail!("update_epochs must be at least 1");
        }
        if self.minibatch == 0 {
            bail!("minibatch must be at least 1");
        }
        for s in &self.strategies {
            if !KNOWN_STRATEGIES.contains(&s.as_str()) {
                bail!(
                    "strategies: unknown strategy `{s}` (known: {})",
                    KNOWN_STRATEGIES.join(", ")
                );
            }
        }
        if self.strategies.is_empty() {
            bail!("strategies must list at least one strategy");
        }
        Ok(())
    }

    /// The fully resolved configuration as a file the parser accepts back.
    /// Floats print in shortest round-trip form, so a re-run from the echo
    /// sees bit-identical values.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration; re-run with --config <this file>\n");
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "data = {}", self.data.display());
        let _ = writeln!(s, "tickers = {}", self.tickers.join(","));
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "train_frac = {}", self.train_frac);
        let _ = writeln!(s, "val_frac = {}", self.val_frac);
        let _ = writeln!(s, "periods_per_year = {}", self.periods_per_year);
        let _ = writeln!(s, "frontier_samples = {}", self.frontier_samples);
        let _ = writeln!(s, "subset_k = {}", self.subset_k);
        let _ = writeln!(s, "subset_samples = {}", self.subset_samples);
        if let Some(b) = self.budget {
            let _ = writeln!(s, "budget = {b}");
        }
        let _ = writeln!(s, "mu_cost = {}", self.mu_cost);
        let _ = writeln!(s, "lookback = {}", self.lookback);
        let _ = writeln!(s, "episode_len = {}", self.episode_len);
        let _ = writeln!(s, "action_interval = {}", self.action_interval);
        let _ = writeln!(s, "rebalance_interval = {}", self.rebalance_interval);
        let _ = writeln!(s, "initial_wealth = {}", self.initial_wealth);
        let _ = writeln!(s, "use_aux = {}", self.use_aux);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "trading_len = {}", self.trading_len);
        let _ = writeln!(s, "eps_vol = {}", self.eps_vol);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "hidden = {}", join(&self.hidden));
        let _ = writeln!(
            s,
            "optimizer = {}",
            match self.optimizer {
                OptimizerKind::GradientAscent => "gradient_ascent",
                OptimizerKind::Adam => "adam",
            }
        );
        let _ = writeln!(s, "ppo_iters = {}", self.ppo_iters);
        let _ = writeln!(s, "episodes_per_iter = {}", self.episodes_per_iter);
        let _ = writeln!(s, "clip_eps = {}", self.clip_eps);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "lam = {}", self.lam);
        let _ = writeln!(s, "update_epochs = {}", self.update_epochs);
        let _ = writeln!(s, "minibatch = {}", self.minibatch);
        let _ = writeln!(s, "ppo_lr = {}", self.ppo_lr);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "ppo_hidden = {}", join(&self.ppo_hidden));
        let _ = writeln!(s, "strategies = {}", self.strategies.join(","));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("data".to_string(), "prices.csv".to_string());
        m.insert("tickers".to_string(), "AAA,BBB".to_string());
        m
    }

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = RunConfig::from_map(minimal()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train_frac, 0.7);
        assert_eq!(cfg.frontier_samples, 10_000);
        assert_eq!(cfg.hidden, vec![64, 64]);
        assert_eq!(cfg.strategies, vec!["equal_weight", "mean_variance"]);
        assert!(cfg.budget.is_none());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut m = minimal();
        m.insert("mu_cots".to_string(), "0.001".to_string());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("unknown config key `mu_cots`"), "{err}");
    }

    #[test]
    fn missing_required_keys_are_named() {
        let err = RunConfig::from_map(BTreeMap::new()).unwrap_err().to_string();
        assert!(err.contains("`data`"), "{err}");
        let mut m = BTreeMap::new();
        m.insert("data".to_string(), "p.csv".to_string());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("`tickers`"), "{err}");
    }

    #[test]
    fn range_errors_name_the_field() {
        let mut m = minimal();
        m.insert("mu_cost".to_string(), "0.5".to_string());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert_eq!(err, "mu_cost out of range [0, 0.1]");

        let mut m = minimal();
        m.insert("train_frac".to_string(), "0.8".to_string());
        m.insert("val_frac".to_string(), "0.2".to_string());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.contains("no test segment"), "{err}");

        let mut m = minimal();
        m.insert("clip_eps".to_string(), "1.5".to_string());
        let err = RunConfig::from_map(m).unwrap_err().to_string();
        assert!(err.starts_with("clip_eps"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let mut m = minimal();
        m.insert("seed".to_string(), "7".to_string());
        m.insert("budget".to_string(), "12345.67".to_string());
        m.insert("alpha".to_string(), "0.015".to_string());
        m.insert("strategies".to_string(), "equal_weight,sharpe_policy".to_string());
        let cfg = RunConfig::from_map(m).unwrap();
        let echoed = parse_kv_text(&cfg.echo(), "echo").unwrap();
        let back = RunConfig::from_map(echoed).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.budget, Some(12345.67));
        assert_eq!(back.alpha, 0.015);
        assert_eq!(back.strategies, cfg.strategies);
        assert_eq!(back.echo(), cfg.echo());
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "# comment\n\n  data= p.csv \ntickers =A, B\nseed=9\n";
        let map = parse_kv_text(text, "inline").unwrap();
        let cfg = RunConfig::from_map(map).unwrap();
        assert_eq!(cfg.tickers, vec!["A", "B"]);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn duplicate_keys_in_file_are_rejected() {
        let err = parse_kv_text("seed = 1\nseed = 2\n", "inline").unwrap_err().to_string();
        assert!(err.contains("set twice"), "{err}");
    }
}
