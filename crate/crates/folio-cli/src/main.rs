//! `folio`: end-to-end pipeline driver.
//!
//! Commands run in the natural order `ingest` → `frontier` → `select` →
//! `allocate` → `train-sharpe` / `train-ppo` → `backtest` → `report`, but each
//! stands alone given its input artifacts. Every command echoes the fully
//! resolved configuration to `<out>/resolved.conf` first; exit status 0 means
//! every requested artifact landed on disk.
//!
//! All randomness descends from the single `seed` key: each pipeline stage
//! derives its own stream with a label, so rerunning one command never
//! perturbs another.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use folio::analytics::{
    covariance, discrete_allocation, expected_returns, max_sharpe, sample_frontier,
    select_best_subset, WeightVector,
};
use folio::backtest::{
    compare_report, equal_weight_strategy, equity_tsv, mean_variance_strategy, run_strategy,
    BacktestReport, StrategyKind, StrategyRef,
};
use folio::exec::derive_seed;
use folio::market_data::{
    chrono_split, clean, load_dataset, to_returns, Normalization, PriceTable, ReturnMatrix,
    SplitSpec,
};
use folio::policy_net::{load_checkpoint, save_checkpoint};
use folio::rl_gym::{train_ppo, EnvConfig, PpoConfig};
use folio::sharpe_trainer::{train, SharpeTrainConfig};
use folio::Matrix;

#[derive(Parser)]
#[command(
    name = "folio",
    version,
    about = "Risk-aware dynamic portfolio allocation pipeline",
    arg_required_else_help = true
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the `out` key (artifact directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra KEY=VALUE overrides applied on top of the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, and snapshot the price panel and its return matrix.
    Ingest,
    /// Sample the long-only frontier on the training segment.
    Frontier,
    /// Exhaustively search asset subsets of size `subset_k`.
    Select,
    /// Turn the selected portfolio into whole-share counts for `budget`.
    Allocate,
    /// Train the softmax policy by Sharpe-ratio gradient ascent.
    TrainSharpe,
    /// Train the Dirichlet-policy agent with clipped policy optimization.
    TrainPpo,
    /// Replay configured strategies on the held-out test segment.
    Backtest,
    /// Aggregate per-strategy reports into one comparison table.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".to_string(), out.display().to_string()));
    }
    let cfg = RunConfig::from_sources(cli.config.as_deref(), &overrides)?;

    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    write_artifact(&cfg.out.join("resolved.conf"), &cfg.echo())?;

    match cli.command {
        Command::Ingest => cmd_ingest(&cfg),
        Command::Frontier => cmd_frontier(&cfg),
        Command::Select => cmd_select(&cfg),
        Command::Allocate => cmd_allocate(&cfg),
        Command::TrainSharpe => cmd_train_sharpe(&cfg),
        Command::TrainPpo => cmd_train_ppo(&cfg),
        Command::Backtest => cmd_backtest(&cfg),
        Command::Report => cmd_report(&cfg),
    }
}

fn write_artifact(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_artifact(path, &text)
}

fn read_json(path: &Path, hint: &str) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| anyhow!("missing artifact {}; run `folio {hint}` first", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_clean(cfg: &RunConfig) -> Result<PriceTable> {
    let raw = load_dataset(&cfg.data, &cfg.tickers)
        .with_context(|| format!("loading {}", cfg.data.display()))?;
    let table = clean(raw)?;
    println!(
        "loaded {} rows x {} tickers ({} .. {})",
        table.dates.len(),
        table.tickers.len(),
        table.dates.first().unwrap(),
        table.dates.last().unwrap()
    );
    Ok(table)
}

/// Chronological segments of the return matrix plus the row counts needed to
/// slice the price panel consistently.
struct Segments {
    train: ReturnMatrix,
    n_train: usize,
    n_val: usize,
}

fn split(cfg: &RunConfig, prices: &PriceTable) -> Result<Segments> {
    let returns = to_returns(prices)?;
    let spec = SplitSpec::new(cfg.train_frac, cfg.val_frac)?;
    let (train, val, _test) = chrono_split(&returns, &spec)?;
    Ok(Segments { n_train: train.rows(), n_val: val.rows(), train })
}

/// Intraday range features aligned with return rows: for each asset, the
/// day's high/close and low/close ratios. `None` when the dataset has no
/// high/low companions.
fn build_aux(prices: &PriceTable) -> Option<Matrix> {
    let (high, low) = match (&prices.high, &prices.low) {
        (Some(h), Some(l)) => (h, l),
        _ => return None,
    };
    let rows = prices.dates.len() - 1;
    let n = prices.tickers.len();
    let mut aux = Matrix::zeros(rows, 2 * n);
    for r in 0..rows {
        for j in 0..n {
            let c = prices.close.get(r + 1, j);
            aux.set(r, j, high.get(r + 1, j) / c);
            aux.set(r, n + j, low.get(r + 1, j) / c);
        }
    }
    Some(aux)
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t")
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;

    let mut csv = String::from("Date");
    for t in &prices.tickers {
        csv.push(',');
        csv.push_str(t);
    }
    csv.push('\n');
    for (r, d) in prices.dates.iter().enumerate() {
        csv.push_str(&d.to_string());
        for c in 0..prices.tickers.len() {
            csv.push(',');
            csv.push_str(&prices.close.get(r, c).to_string());
        }
        csv.push('\n');
    }
    write_artifact(&cfg.out.join("prices_clean.csv"), &csv)?;

    let returns = to_returns(&prices)?;
    let mut tsv = String::from("date");
    for t in &returns.tickers {
        tsv.push('\t');
        tsv.push_str(t);
    }
    tsv.push('\n');
    for (r, d) in returns.dates.iter().enumerate() {
        tsv.push_str(&d.to_string());
        tsv.push('\t');
        tsv.push_str(&fmt_row(returns.returns.row(r)));
        tsv.push('\n');
    }
    write_artifact(&cfg.out.join("returns.tsv"), &tsv)
}

fn cmd_frontier(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;
    let seg = split(cfg, &prices)?;
    let mu = expected_returns(&seg.train, cfg.periods_per_year)?;
    let cov = covariance(&seg.train, cfg.periods_per_year)?;
    let points = sample_frontier(
        &mu,
        &cov,
        cfg.frontier_samples,
        derive_seed(cfg.seed, "cli-frontier", 0),
    )?;
    let best = max_sharpe(&points)?;
    println!(
        "sampled {} portfolios on the training segment; best sharpe {:.4}",
        points.len(),
        best.sharpe
    );

    let mut tsv = String::from("risk\treturn\tsharpe");
    for t in &seg.train.tickers {
        tsv.push_str(&format!("\tw_{t}"));
    }
    tsv.push('\n');
    for p in &points {
        tsv.push_str(&format!("{}\t{}\t{}\t", p.risk, p.expected_return, p.sharpe));
        tsv.push_str(&fmt_row(p.weights.as_slice()));
        tsv.push('\n');
    }
    write_artifact(&cfg.out.join("frontier.tsv"), &tsv)
}

fn cmd_select(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;
    let seg = split(cfg, &prices)?;
    let search = select_best_subset(
        &seg.train,
        cfg.subset_k,
        cfg.subset_samples,
        cfg.periods_per_year,
        derive_seed(cfg.seed, "cli-select", 0),
    )?;
    println!(
        "examined {} subsets of {} from {} tickers; best sharpe {:.4}",
        search.subsets_examined,
        cfg.subset_k,
        seg.train.n_assets(),
        search.best.sharpe
    );
    write_json(
        &cfg.out.join("selection.json"),
        &serde_json::json!({
            "tickers": search.tickers,
            "weights": search.best.weights.as_slice(),
            "expected_return": search.best.expected_return,
            "risk": search.best.risk,
            "sharpe": search.best.sharpe,
            "subsets_examined": search.subsets_examined,
        }),
    )
}

fn cmd_allocate(cfg: &RunConfig) -> Result<()> {
    let budget = cfg
        .budget
        .ok_or_else(|| anyhow!("budget is required for allocate; set `budget` in the config"))?;
    let selection = read_json(&cfg.out.join("selection.json"), "select")?;
    let tickers: Vec<String> = serde_json::from_value(selection["tickers"].clone())
        .context("selection.json: tickers")?;
    let weights: Vec<f64> = serde_json::from_value(selection["weights"].clone())
        .context("selection.json: weights")?;
    let w = WeightVector::new(weights)?;

    let prices = load_clean(cfg)?;
    let latest: Vec<f64> = tickers
        .iter()
        .map(|t| {
            prices
                .tickers
                .iter()
                .position(|p| p == t)
                .map(|i| prices.latest_close()[i])
                .ok_or_else(|| anyhow!("selection.json names `{t}`, absent from the price data"))
        })
        .collect::<Result<_>>()?;

    let plan = discrete_allocation(&w, &tickers, &latest, budget)?;
    let invested = budget - plan.leftover;
    println!("allocated {invested:.2} of {budget:.2}; leftover {:.2}", plan.leftover);
    write_json(
        &cfg.out.join("allocation.json"),
        &serde_json::json!({
            "budget": budget,
            "shares": plan.shares,
            "latest_prices": latest,
            "leftover": plan.leftover,
        }),
    )
}

fn cmd_train_sharpe(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;
    let seg = split(cfg, &prices)?;
    let tc = SharpeTrainConfig {
        alpha: cfg.alpha,
        epochs: cfg.epochs,
        trading_len: cfg.trading_len,
        lookback: cfg.lookback,
        eps_vol: cfg.eps_vol,
        weight_decay: cfg.weight_decay,
        hidden: cfg.hidden.clone(),
        optimizer: cfg.optimizer,
    };
    let seed = derive_seed(cfg.seed, "cli-sharpe", 0);
    let out = train(&seg.train, &tc, seed)?;
    let last = out.history.last().copied().unwrap_or(f64::NAN);
    println!("trained {} epochs; final objective {last:.4}", out.history.len());

    save_checkpoint(&out.params, Some(seed), &cfg.out.join("sharpe_policy.json"))?;
    println!("wrote {}", cfg.out.join("sharpe_policy.json").display());
    write_json(
        &cfg.out.join("sharpe_meta.json"),
        &serde_json::json!({
            "normalization": out.norm,
            "lookback": cfg.lookback,
            "hidden": cfg.hidden,
            "tickers": seg.train.tickers,
        }),
    )?;
    let mut tsv = String::from("epoch\tsharpe\n");
    for (i, l) in out.history.iter().enumerate() {
        tsv.push_str(&format!("{i}\t{l}\n"));
    }
    write_artifact(&cfg.out.join("sharpe_history.tsv"), &tsv)
}

fn cmd_train_ppo(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;
    let seg = split(cfg, &prices)?;
    let train_prices = prices.slice_rows(0, seg.n_train + 1);
    let aux = if cfg.use_aux {
        Some(build_aux(&train_prices).ok_or_else(|| {
            anyhow!("use_aux = true but {} has no _high/_low companion files", cfg.data.display())
        })?)
    } else {
        None
    };

    let env_cfg = EnvConfig {
        mu_cost: cfg.mu_cost,
        lookback: cfg.lookback,
        episode_len: cfg.episode_len,
        initial_wealth: cfg.initial_wealth,
        action_interval: cfg.action_interval,
    };
    let pc = PpoConfig {
        iters: cfg.ppo_iters,
        episodes_per_iter: cfg.episodes_per_iter,
        clip_eps: cfg.clip_eps,
        gamma: cfg.gamma,
        lam: cfg.lam,
        update_epochs: cfg.update_epochs,
        minibatch: cfg.minibatch,
        lr: cfg.ppo_lr,
        grad_clip: cfg.grad_clip,
        hidden: cfg.ppo_hidden.clone(),
    };
    let seed = derive_seed(cfg.seed, "cli-ppo", 0);
    let out = train_ppo(&seg.train, aux.as_ref(), &env_cfg, &pc, seed)?;
    if let Some(row) = out.history.last() {
        println!(
            "trained {} iterations; mean episode reward {:.5}",
            out.history.len(),
            row.mean_episode_reward
        );
    }

    save_checkpoint(&out.actor, Some(seed), &cfg.out.join("ppo_actor.json"))?;
    println!("wrote {}", cfg.out.join("ppo_actor.json").display());
    save_checkpoint(&out.critic, Some(seed), &cfg.out.join("ppo_critic.json"))?;
    println!("wrote {}", cfg.out.join("ppo_critic.json").display());
    write_json(
        &cfg.out.join("ppo_meta.json"),
        &serde_json::json!({
            "normalization": out.norm,
            "lookback": cfg.lookback,
            "use_aux": cfg.use_aux,
            "aux_cols": aux.as_ref().map_or(0, Matrix::cols),
            "tickers": seg.train.tickers,
        }),
    )?;
    let mut tsv = String::from("iter\tmean_episode_reward\tactor_loss\tcritic_loss\n");
    for row in &out.history {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.iter, row.mean_episode_reward, row.actor_loss, row.critic_loss
        ));
    }
    write_artifact(&cfg.out.join("ppo_history.tsv"), &tsv)
}

/// Max-Sharpe weights fitted on the training segment, shared by the
/// mean-variance and buy-and-hold strategies.
fn fitted_weights(cfg: &RunConfig, train: &ReturnMatrix) -> Result<WeightVector> {
    let strat = mean_variance_strategy(
        train,
        cfg.periods_per_year,
        cfg.frontier_samples,
        derive_seed(cfg.seed, "cli-mean-variance", 0),
        cfg.rebalance_interval,
    )?;
    match strat.kind {
        StrategyKind::MeanVariance { weights } => Ok(weights),
        _ => unreachable!("mean_variance_strategy returns fixed weights"),
    }
}

fn cmd_backtest(cfg: &RunConfig) -> Result<()> {
    let prices = load_clean(cfg)?;
    let seg = split(cfg, &prices)?;
    let test_prices = prices.slice_rows(seg.n_train + seg.n_val, prices.dates.len());
    println!(
        "test segment: {} rows ({} .. {})",
        test_prices.dates.len(),
        test_prices.dates.first().unwrap(),
        test_prices.dates.last().unwrap()
    );

    let mut fitted: Option<WeightVector> = None;
    let mut fit = |cfg: &RunConfig, train: &ReturnMatrix| -> Result<WeightVector> {
        if fitted.is_none() {
            fitted = Some(fitted_weights(cfg, train)?);
        }
        Ok(fitted.clone().unwrap())
    };

    for name in &cfg.strategies {
        let strategy = match name.as_str() {
            "equal_weight" => equal_weight_strategy(cfg.tickers.len(), cfg.rebalance_interval)?,
            "mean_variance" => StrategyRef {
                name: name.clone(),
                kind: StrategyKind::MeanVariance { weights: fit(cfg, &seg.train)? },
                rebalance_interval: cfg.rebalance_interval,
            },
            "buy_and_hold" => StrategyRef {
                name: name.clone(),
                kind: StrategyKind::BuyAndHold { weights: fit(cfg, &seg.train)? },
                rebalance_interval: 1,
            },
            "sharpe_policy" => {
                let (params, _) = load_checkpoint(&cfg.out.join("sharpe_policy.json")).map_err(
                    |e| anyhow!("sharpe_policy.json: {e}; run `folio train-sharpe` first"),
                )?;
                let meta = read_json(&cfg.out.join("sharpe_meta.json"), "train-sharpe")?;
                let norm: Normalization =
                    serde_json::from_value(meta["normalization"].clone())
                        .context("sharpe_meta.json: normalization")?;
                let lookback = meta["lookback"]
                    .as_u64()
                    .ok_or_else(|| anyhow!("sharpe_meta.json: lookback"))?
                    as usize;
                StrategyRef {
                    name: name.clone(),
                    kind: StrategyKind::SharpePolicy { params, norm, lookback },
                    rebalance_interval: cfg.rebalance_interval,
                }
            }
            "drl_ppo" => {
                let (actor, _) = load_checkpoint(&cfg.out.join("ppo_actor.json"))
                    .map_err(|e| anyhow!("ppo_actor.json: {e}; run `folio train-ppo` first"))?;
                let meta = read_json(&cfg.out.join("ppo_meta.json"), "train-ppo")?;
                let norm: Normalization =
                    serde_json::from_value(meta["normalization"].clone())
                        .context("ppo_meta.json: normalization")?;
                let lookback = meta["lookback"]
                    .as_u64()
                    .ok_or_else(|| anyhow!("ppo_meta.json: lookback"))?
                    as usize;
                let aux = if meta["use_aux"].as_bool().unwrap_or(false) {
                    Some(build_aux(&test_prices).ok_or_else(|| {
                        anyhow!(
                            "the trained agent expects high/low features but {} has no \
                             _high/_low companion files",
                            cfg.data.display()
                        )
                    })?)
                } else {
                    None
                };
                StrategyRef {
                    name: name.clone(),
                    kind: StrategyKind::DrlPpo { actor, norm, lookback, aux },
                    rebalance_interval: cfg.action_interval,
                }
            }
            other => bail!("strategies: unknown strategy `{other}`"),
        };
        let report =
            run_strategy(&strategy, &test_prices, cfg.mu_cost, cfg.initial_wealth, cfg.periods_per_year)?;
        let m = &report.metrics;
        println!(
            "{name}: ann_return {:.4}, ann_vol {:.4}, sharpe {}, max_drawdown {:.4}, turnover {:.4}",
            m.ann_return,
            m.ann_vol,
            m.sharpe.map_or("NA".to_string(), |s| format!("{s:.4}")),
            m.max_drawdown,
            m.turnover,
        );
        write_json(
            &cfg.out.join(format!("report_{name}.json")),
            &serde_json::to_value(&report)?,
        )?;
        write_artifact(&cfg.out.join(format!("equity_{name}.tsv")), &equity_tsv(&report))?;
    }
    Ok(())
}

fn cmd_report(cfg: &RunConfig) -> Result<()> {
    let mut reports: Vec<BacktestReport> = Vec::new();
    for entry in std::fs::read_dir(&cfg.out)
        .with_context(|| format!("reading {}", cfg.out.display()))?
    {
        let path = entry?.path();
        let file = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if file.starts_with("report_") && file.ends_with(".json") {
            let text = std::fs::read_to_string(&path)?;
            let report: BacktestReport = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            reports.push(report);
        }
    }
    if reports.is_empty() {
        bail!("no report_*.json artifacts in {}; run `folio backtest` first", cfg.out.display());
    }
    // Configured order first, stragglers alphabetically after.
    let rank = |n: &str| {
        cfg.strategies
            .iter()
            .position(|s| s == n)
            .map_or((1, n.to_string()), |i| (0, format!("{i:04}")))
    };
    reports.sort_by_key(|r| rank(&r.strategy));

    let (tsv, json) = compare_report(&reports)?;
    print!("{tsv}");
    write_artifact(&cfg.out.join("comparison.tsv"), &tsv)?;
    write_json(&cfg.out.join("comparison.json"), &json)
}
