//! Clipped-surrogate policy optimization over the rebalancing environment.
//!
//! Rollouts sample Dirichlet actions at each decision step (every
//! `action_interval` environment steps; rewards in between accrue to the
//! decision that caused them). Advantages come from generalized advantage
//! estimation; updates maximize
//!
//! ```text
//! mean(min(rho * adv, clamp(rho, 1 - eps, 1 + eps) * adv))
//! ```
//!
//! with `rho` the new/old density ratio, while the critic descends the mean
//! squared error against the return targets. All gradients are exact
//! closed-form chains (surrogate -> ratio -> Dirichlet density ->
//! concentrations -> logits -> network), verified against finite differences
//! in the test suite.

use super::dirichlet::{
    concentration, concentration_jacobian, log_density, log_density_grad, mean_action, sample,
};
use super::env::{EnvConfig, PortfolioEnv};
use super::GymError;
use crate::analytics::WeightVector;
use crate::exec::{self, derive_seed};
use crate::market_data::{Normalization, ReturnMatrix};
use crate::mat::Matrix;
use crate::optim::{clip_grad_norm, Adam};
use crate::policy_net::{backward_raw, forward_raw, init_params, MlpParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub iters: usize,
    pub episodes_per_iter: usize,
    /// Clip radius for the density ratio.
    pub clip_eps: f64,
    /// Reward discount per decision step.
    pub gamma: f64,
    /// Advantage smoothing factor.
    pub lam: f64,
    /// Passes over each collected batch.
    pub update_epochs: usize,
    pub minibatch: usize,
    /// Adam step size for both networks.
    pub lr: f64,
    /// Gradient norm ceiling per network per minibatch.
    pub grad_clip: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            iters: 100,
            episodes_per_iter: 8,
            clip_eps: 0.2,
            gamma: 0.99,
            lam: 0.95,
            update_epochs: 4,
            minibatch: 64,
            lr: 3e-4,
            grad_clip: 0.5,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), GymError> {
        if self.episodes_per_iter == 0 {
            return Err(GymError::BadConfig("episodes_per_iter must be at least 1".into()));
        }
        if !(self.clip_eps.is_finite() && self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GymError::BadConfig(format!(
                "clip_eps must be in (0, 1), got {}",
                self.clip_eps
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("lam", self.lam)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(GymError::BadConfig(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.update_epochs == 0 {
            return Err(GymError::BadConfig("update_epochs must be at least 1".into()));
        }
        if self.minibatch == 0 {
            return Err(GymError::BadConfig("minibatch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(GymError::BadConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(GymError::BadConfig(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// Per-decision records from one episode. All columns are aligned.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<WeightVector>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<(), GymError> {
        let n = self.features.len();
        for (context, len) in [
            ("trajectory actions", self.actions.len()),
            ("trajectory rewards", self.rewards.len()),
            ("trajectory values", self.values.len()),
            ("trajectory log-probs", self.log_probs.len()),
        ] {
            if len != n {
                return Err(GymError::LengthMismatch { context, left: len, right: n });
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(GymError::NonFinite("trajectory rewards"));
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one trajectory.
///
/// `delta_t = r_t + gamma * V_{t+1} - V_t` with `V` past the end given by
/// `bootstrap_value` (0 for a terminal episode); advantages follow the
/// backward recursion `adv_t = delta_t + gamma * lam * adv_{t+1}`. Returns
/// the advantages and the value targets `adv + V`.
pub fn gae_advantages(
    traj: &Trajectory,
    gamma: f64,
    lam: f64,
    bootstrap_value: f64,
) -> Result<(Vec<f64>, Vec<f64>), GymError> {
    traj.validate()?;
    for (name, v) in [("gamma", gamma), ("lam", lam)] {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(GymError::BadConfig(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    let n = traj.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let delta = traj.rewards[t] + gamma * next_value - traj.values[t];
        next_adv = delta + gamma * lam * next_adv;
        adv[t] = next_adv;
        next_value = traj.values[t];
    }
    let targets = adv.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Flattened experience from one round of rollouts.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<WeightVector>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Concatenates trajectories, running advantage estimation on each.
    /// Episodes are complete, so every bootstrap value is zero.
    pub fn from_trajectories(
        trajs: &[Trajectory],
        gamma: f64,
        lam: f64,
    ) -> Result<Self, GymError> {
        let mut batch = PpoBatch::default();
        for traj in trajs {
            let (adv, targets) = gae_advantages(traj, gamma, lam, 0.0)?;
            batch.features.extend(traj.features.iter().cloned());
            batch.actions.extend(traj.actions.iter().cloned());
            batch.old_log_probs.extend(&traj.log_probs);
            batch.advantages.extend(adv);
            batch.returns.extend(targets);
        }
        if batch.is_empty() {
            return Err(GymError::EmptyBatch);
        }
        Ok(batch)
    }

    fn validate(&self) -> Result<(), GymError> {
        if self.is_empty() {
            return Err(GymError::EmptyBatch);
        }
        let n = self.features.len();
        for (context, len) in [
            ("batch actions", self.actions.len()),
            ("batch log-probs", self.old_log_probs.len()),
            ("batch advantages", self.advantages.len()),
            ("batch returns", self.returns.len()),
        ] {
            if len != n {
                return Err(GymError::LengthMismatch { context, left: len, right: n });
            }
        }
        Ok(())
    }
}

/// Zero-mean unit-variance scaling across the batch. A single-sample batch
/// keeps its raw advantage: centering would erase the only signal.
fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    adv.iter().map(|a| (a - mean) * scale).collect()
}

fn actor_minibatch(
    actor: &MlpParams,
    batch: &PpoBatch,
    idx: &[usize],
    adv: &[f64],
    clip: f64,
) -> Result<(f64, MlpParams), GymError> {
    let per: Vec<Result<(f64, Option<MlpParams>), GymError>> = exec::map_indexed(idx.len(), |j| {
        let i = idx[j];
        let (logits, cache) = forward_raw(actor, &batch.features[i])?;
        let alpha = concentration(&logits);
        let w = batch.actions[i].as_slice();
        let logp = log_density(&alpha, w)?;
        let ratio = (logp - batch.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(GymError::NonFinite("probability ratio"));
        }
        let a = adv[i];
        let surr = (ratio * a).min(ratio.clamp(1.0 - clip, 1.0 + clip) * a);
        // The clipped branch is flat; gradient flows only while the ratio is
        // inside the trust region on the side the advantage pushes toward.
        let active = (a > 0.0 && ratio < 1.0 + clip) || (a < 0.0 && ratio > 1.0 - clip);
        let grad = if active {
            let dsurr_dlogp = a * ratio;
            let dlogp_dalpha = log_density_grad(&alpha, w)?;
            let dalpha_dlogit = concentration_jacobian(&logits);
            let grad_logits: Vec<f64> = dlogp_dalpha
                .iter()
                .zip(&dalpha_dlogit)
                .map(|(g, s)| dsurr_dlogp * g * s)
                .collect();
            Some(backward_raw(actor, &cache, &grad_logits)?)
        } else {
            None
        };
        Ok((surr, grad))
    });
    let m = idx.len() as f64;
    let mut surr_sum = 0.0;
    let mut total = actor.zeros_like();
    for p in per {
        let (s, g) = p?;
        surr_sum += s;
        if let Some(g) = g {
            total.scaled_add(&g, 1.0 / m);
        }
    }
    Ok((-surr_sum / m, total))
}

fn critic_minibatch(
    critic: &MlpParams,
    batch: &PpoBatch,
    idx: &[usize],
) -> Result<(f64, MlpParams), GymError> {
    let per: Vec<Result<(f64, MlpParams), GymError>> = exec::map_indexed(idx.len(), |j| {
        let i = idx[j];
        let (out, cache) = forward_raw(critic, &batch.features[i])?;
        let err = out[0] - batch.returns[i];
        let grad = backward_raw(critic, &cache, &[2.0 * err])?;
        Ok((err * err, grad))
    });
    let m = idx.len() as f64;
    let mut loss = 0.0;
    let mut total = critic.zeros_like();
    for p in per {
        let (l, g) = p?;
        loss += l;
        total.scaled_add(&g, 1.0 / m);
    }
    Ok((loss / m, total))
}

/// Runs `update_epochs` shuffled minibatch passes over the batch, ascending
/// the clipped surrogate on the actor and descending the value MSE on the
/// critic. Returns the mean actor loss (negative surrogate) and critic loss
/// across all minibatch updates.
pub fn ppo_update(
    actor: &mut MlpParams,
    critic: &mut MlpParams,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), GymError> {
    cfg.validate()?;
    batch.validate()?;
    let adv = normalize_advantages(&batch.advantages);
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut actor_loss = 0.0;
    let mut critic_loss = 0.0;
    let mut updates = 0usize;
    for _ in 0..cfg.update_epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let (al, mut ag) = actor_minibatch(actor, batch, chunk, &adv, cfg.clip_eps)?;
            let (cl, mut cg) = critic_minibatch(critic, batch, chunk)?;
            clip_grad_norm(&mut ag, cfg.grad_clip);
            clip_grad_norm(&mut cg, cfg.grad_clip);
            actor_opt.step(actor, &ag, true);
            critic_opt.step(critic, &cg, false);
            actor_loss += al;
            critic_loss += cl;
            updates += 1;
        }
    }
    if !(actor.is_finite() && critic.is_finite()) {
        return Err(GymError::NonFinite("network parameters after update"));
    }
    Ok((actor_loss / updates as f64, critic_loss / updates as f64))
}

fn rollout(
    env: &PortfolioEnv,
    actor: &MlpParams,
    critic: &MlpParams,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, f64), GymError> {
    let interval = env.cfg().action_interval;
    let mut state = env.reset_at(start)?;
    let mut traj = Trajectory::default();
    let mut step_rewards = Vec::with_capacity(env.cfg().episode_len);
    loop {
        let action = if state.step % interval == 0 {
            let x = env.observe(&state);
            let (logits, _) = forward_raw(actor, &x)?;
            let alpha = concentration(&logits);
            let w = sample(&alpha, rng)?;
            let logp = log_density(&alpha, w.as_slice())?;
            let (value, _) = forward_raw(critic, &x)?;
            traj.features.push(x);
            traj.actions.push(w.clone());
            traj.log_probs.push(logp);
            traj.values.push(value[0]);
            w
        } else {
            // Hold between decisions: re-submitting the drifted book incurs
            // zero turnover and zero cost.
            state.prev_weights.clone()
        };
        let step = env.step(&state, action.as_slice())?;
        step_rewards.push(step.reward);
        state = step.state;
        if step.done {
            break;
        }
    }
    // Rewards accrue to the decision in force when they realized.
    let mut rewards = vec![0.0; traj.len()];
    let mut d = 0usize;
    for (s, r) in step_rewards.iter().enumerate() {
        if s > 0 && s % interval == 0 {
            d += 1;
        }
        rewards[d] += r;
    }
    traj.rewards = rewards;
    let total = step_rewards.iter().sum();
    Ok((traj, total))
}

/// Replays one episode with the deterministic policy (Dirichlet mean).
/// Returns the decision-step actions and the total log growth.
pub fn eval_episode(
    env: &PortfolioEnv,
    actor: &MlpParams,
    start: usize,
) -> Result<(Vec<WeightVector>, f64), GymError> {
    let interval = env.cfg().action_interval;
    let mut state = env.reset_at(start)?;
    let mut actions = Vec::new();
    let mut total = 0.0;
    loop {
        let action = if state.step % interval == 0 {
            let x = env.observe(&state);
            let (logits, _) = forward_raw(actor, &x)?;
            let a = mean_action(&concentration(&logits))?;
            actions.push(a.clone());
            a
        } else {
            state.prev_weights.clone()
        };
        let step = env.step(&state, action.as_slice())?;
        total += step.reward;
        state = step.state;
        if step.done {
            break;
        }
    }
    Ok((actions, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoHistoryRow {
    pub iter: usize,
    pub mean_episode_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
}

pub struct PpoOutcome {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub history: Vec<PpoHistoryRow>,
    pub norm: Normalization,
}

/// Full training loop: roll out episodes with the stochastic policy from
/// random segment offsets, estimate advantages, update. Feature
/// standardization is fitted on `data` here and carried in the outcome so
/// evaluation segments can reuse it. Deterministic for a fixed seed; zero
/// iterations returns the freshly initialized networks.
pub fn train_ppo(
    data: &ReturnMatrix,
    aux: Option<&Matrix>,
    env_cfg: &EnvConfig,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<PpoOutcome, GymError> {
    cfg.validate()?;
    let norm = Normalization::fit(data);
    let env = PortfolioEnv::new(data, aux, &norm, env_cfg)?;
    let mut actor_sizes = vec![env.feature_dim()];
    actor_sizes.extend(&cfg.hidden);
    let mut critic_sizes = actor_sizes.clone();
    actor_sizes.push(env.n_assets());
    critic_sizes.push(1);
    let mut actor = init_params(&actor_sizes, derive_seed(seed, "ppo-actor", 0))?;
    let mut critic = init_params(&critic_sizes, derive_seed(seed, "ppo-critic", 0))?;
    let mut actor_opt = Adam::new(cfg.lr, &actor);
    let mut critic_opt = Adam::new(cfg.lr, &critic);

    let mut history = Vec::with_capacity(cfg.iters);
    for iter in 0..cfg.iters {
        let mut roll_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, "ppo-rollout", iter as u64));
        let mut trajs = Vec::with_capacity(cfg.episodes_per_iter);
        let mut episode_totals = Vec::with_capacity(cfg.episodes_per_iter);
        for _ in 0..cfg.episodes_per_iter {
            let start = if env.n_starts() > 1 {
                roll_rng.random_range(0..env.n_starts())
            } else {
                0
            };
            let (traj, total) = rollout(&env, &actor, &critic, start, &mut roll_rng)?;
            trajs.push(traj);
            episode_totals.push(total);
        }
        let batch = PpoBatch::from_trajectories(&trajs, cfg.gamma, cfg.lam)?;
        let mut update_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, "ppo-shuffle", iter as u64));
        let (actor_loss, critic_loss) = ppo_update(
            &mut actor,
            &mut critic,
            &batch,
            cfg,
            &mut actor_opt,
            &mut critic_opt,
            &mut update_rng,
        )?;
        let mean_episode_reward =
            episode_totals.iter().sum::<f64>() / episode_totals.len() as f64;
        history.push(PpoHistoryRow { iter, mean_episode_reward, actor_loss, critic_loss });
    }
    Ok(PpoOutcome { actor, critic, history, norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn traj_of(rewards: &[f64], values: &[f64]) -> Trajectory {
        let n = rewards.len();
        Trajectory {
            features: vec![vec![0.0]; n],
            actions: vec![WeightVector::uniform(2); n],
            rewards: rewards.to_vec(),
            values: values.to_vec(),
            log_probs: vec![0.0; n],
        }
    }

    fn returns_of(rows: &[Vec<f64>]) -> ReturnMatrix {
        let start = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        ReturnMatrix {
            dates: (0..rows.len()).map(|i| start + chrono::Days::new(i as u64)).collect(),
            tickers: (0..rows[0].len()).map(|i| format!("T{i}")).collect(),
            returns: Matrix::from_rows(rows),
        }
    }

    /// Asset 0 gains a deterministic +0.001 every step; asset 1 is flat.
    fn dominant_market(rows: usize) -> ReturnMatrix {
        returns_of(&(0..rows).map(|_| vec![0.001, 0.0]).collect::<Vec<_>>())
    }

    #[test]
    fn gae_hand_checks() {
        let (adv, targets) = gae_advantages(&traj_of(&[1.0, 1.0], &[0.0, 0.0]), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(adv, vec![2.0, 1.0]);
        assert_eq!(targets, vec![2.0, 1.0]);

        let (adv, _) = gae_advantages(&traj_of(&[0.0; 4], &[0.0; 4]), 0.9, 0.8, 0.0).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));

        // With lam = 0 each advantage collapses to its own delta.
        let traj = traj_of(&[1.0, 2.0, 3.0], &[0.5, 0.25, 0.125]);
        let (adv, _) = gae_advantages(&traj, 0.9, 0.0, 0.7).unwrap();
        for t in 0..3 {
            let next_v = if t == 2 { 0.7 } else { traj.values[t + 1] };
            let delta = traj.rewards[t] + 0.9 * next_v - traj.values[t];
            assert!((adv[t] - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_with_full_smoothing_equals_reward_to_go() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..30);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let bootstrap = rng.random::<f64>() - 0.5;
            let (adv, _) =
                gae_advantages(&traj_of(&rewards, &values), 1.0, 1.0, bootstrap).unwrap();
            for t in 0..n {
                let to_go: f64 = rewards[t..].iter().sum::<f64>() + bootstrap;
                assert!(
                    (adv[t] - (to_go - values[t])).abs() < 1e-12,
                    "t = {t}: {} vs {}",
                    adv[t],
                    to_go - values[t]
                );
            }
        }
    }

    #[test]
    fn gae_validation() {
        let mut bad = traj_of(&[1.0, 1.0], &[0.0, 0.0]);
        bad.values.pop();
        assert!(matches!(
            gae_advantages(&bad, 1.0, 1.0, 0.0),
            Err(GymError::LengthMismatch { .. })
        ));
        let ok = traj_of(&[1.0], &[0.0]);
        assert!(gae_advantages(&ok, 1.5, 1.0, 0.0).is_err());
        assert!(gae_advantages(&ok, 1.0, -0.1, 0.0).is_err());
    }

    /// Builds a tiny env plus a batch whose old log-probs come from the
    /// current actor, so the first minibatch sees ratio exactly 1.
    fn fresh_batch(
        env: &PortfolioEnv,
        actor: &MlpParams,
        critic: &MlpParams,
        cfg: &PpoConfig,
        seed: u64,
    ) -> PpoBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trajs = Vec::new();
        for _ in 0..4 {
            let (t, _) = rollout(env, actor, critic, 0, &mut rng).unwrap();
            trajs.push(t);
        }
        PpoBatch::from_trajectories(&trajs, cfg.gamma, cfg.lam).unwrap()
    }

    fn tiny_setup() -> (PortfolioEnv, MlpParams, MlpParams, PpoConfig) {
        let data = dominant_market(30);
        let norm = Normalization::fit(&data);
        let env_cfg = EnvConfig {
            mu_cost: 0.0,
            lookback: 2,
            episode_len: 10,
            initial_wealth: 1.0,
            action_interval: 1,
        };
        let env = PortfolioEnv::new(&data, None, &norm, &env_cfg).unwrap();
        let actor = init_params(&[env.feature_dim(), 8, 2], 1).unwrap();
        let critic = init_params(&[env.feature_dim(), 8, 1], 2).unwrap();
        let cfg = PpoConfig { hidden: vec![8], ..PpoConfig::default() };
        (env, actor, critic, cfg)
    }

    #[test]
    fn identity_update_reports_zero_surrogate() {
        let (env, mut actor, mut critic, _) = tiny_setup();
        let cfg = PpoConfig {
            update_epochs: 1,
            minibatch: 1000,
            lr: 1e-12,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let batch = fresh_batch(&env, &actor, &critic, &cfg, 3);
        let mut a_opt = Adam::new(cfg.lr, &actor);
        let mut c_opt = Adam::new(cfg.lr, &critic);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (actor_loss, _) =
            ppo_update(&mut actor, &mut critic, &batch, &cfg, &mut a_opt, &mut c_opt, &mut rng)
                .unwrap();
        // Ratios are exactly 1, so the surrogate is the mean of the
        // normalized advantages, which is zero by construction.
        assert!(actor_loss.abs() < 1e-9, "got {actor_loss}");
    }

    #[test]
    fn positive_advantage_raises_the_sample_log_density() {
        let (env, mut actor, mut critic, _) = tiny_setup();
        let cfg = PpoConfig {
            update_epochs: 1,
            minibatch: 1,
            lr: 1e-2,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let full = fresh_batch(&env, &actor, &critic, &cfg, 4);
        let single = PpoBatch {
            features: vec![full.features[0].clone()],
            actions: vec![full.actions[0].clone()],
            old_log_probs: vec![full.old_log_probs[0]],
            advantages: vec![1.0],
            returns: vec![full.returns[0]],
        };
        let logp_before = {
            let (logits, _) = forward_raw(&actor, &single.features[0]).unwrap();
            log_density(&concentration(&logits), single.actions[0].as_slice()).unwrap()
        };
        let mut a_opt = Adam::new(cfg.lr, &actor);
        let mut c_opt = Adam::new(cfg.lr, &critic);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ppo_update(&mut actor, &mut critic, &single, &cfg, &mut a_opt, &mut c_opt, &mut rng)
            .unwrap();
        let logp_after = {
            let (logits, _) = forward_raw(&actor, &single.features[0]).unwrap();
            log_density(&concentration(&logits), single.actions[0].as_slice()).unwrap()
        };
        assert!(
            logp_after > logp_before,
            "log-density did not rise: {logp_before} -> {logp_after}"
        );
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        use crate::policy_net::finite_diff_grad;
        let (env, actor, critic, cfg) = tiny_setup();
        let batch = fresh_batch(&env, &actor, &critic, &cfg, 6);
        // Stale the old log-probs a little so ratios are not exactly 1.
        let mut batch = batch;
        for (i, lp) in batch.old_log_probs.iter_mut().enumerate() {
            *lp += 0.01 * (i as f64 % 3.0 - 1.0);
        }
        let adv = normalize_advantages(&batch.advantages);
        let idx: Vec<usize> = (0..batch.len()).collect();
        let (_, analytic) = actor_minibatch(&actor, &batch, &idx, &adv, cfg.clip_eps).unwrap();
        let surrogate = |p: &MlpParams| {
            let mut total = 0.0;
            for i in 0..batch.len() {
                let (logits, _) = forward_raw(p, &batch.features[i]).unwrap();
                let alpha = concentration(&logits);
                let logp = log_density(&alpha, batch.actions[i].as_slice()).unwrap();
                let ratio = (logp - batch.old_log_probs[i]).exp();
                let a = adv[i];
                total += (ratio * a).min(ratio.clamp(0.8, 1.2) * a);
            }
            total / batch.len() as f64
        };
        let fd = finite_diff_grad(&actor, surrogate, 1e-5).unwrap();
        let mut worst = 0.0f64;
        for (a, f) in analytic.iter().zip(fd.iter()) {
            let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn critic_matching_targets_has_zero_loss() {
        let (env, actor, critic, cfg) = tiny_setup();
        let mut batch = fresh_batch(&env, &actor, &critic, &cfg, 7);
        // Zero critic output (zeroed params) against zero targets.
        let mut zero_critic = critic.zeros_like();
        for v in zero_critic.iter_mut() {
            *v = 0.0;
        }
        for r in batch.returns.iter_mut() {
            *r = 0.0;
        }
        let idx: Vec<usize> = (0..batch.len()).collect();
        let (loss, _) = critic_minibatch(&zero_critic, &batch, &idx).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn repeated_updates_shrink_critic_loss() {
        let (env, mut actor, mut critic, _) = tiny_setup();
        let cfg = PpoConfig {
            update_epochs: 4,
            minibatch: 16,
            lr: 3e-3,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let batch = fresh_batch(&env, &actor, &critic, &cfg, 8);
        let mut a_opt = Adam::new(cfg.lr, &actor);
        let mut c_opt = Adam::new(cfg.lr, &critic);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..30 {
            let (_, cl) =
                ppo_update(&mut actor, &mut critic, &batch, &cfg, &mut a_opt, &mut c_opt, &mut rng)
                    .unwrap();
            first.get_or_insert(cl);
            last = cl;
        }
        let first = first.unwrap();
        assert!(last < first * 0.5, "critic loss {first} -> {last}");
    }

    #[test]
    fn rollout_groups_rewards_by_decision() {
        let data = dominant_market(30);
        let norm = Normalization::fit(&data);
        let env_cfg = EnvConfig {
            mu_cost: 0.0,
            lookback: 2,
            episode_len: 7,
            initial_wealth: 1.0,
            action_interval: 3,
        };
        let env = PortfolioEnv::new(&data, None, &norm, &env_cfg).unwrap();
        let actor = init_params(&[env.feature_dim(), 4, 2], 1).unwrap();
        let critic = init_params(&[env.feature_dim(), 4, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (traj, total) = rollout(&env, &actor, &critic, 0, &mut rng).unwrap();
        // Decisions at steps 0, 3, 6 -> three entries covering 3 + 3 + 1 steps.
        assert_eq!(traj.len(), 3);
        traj.validate().unwrap();
        assert!((traj.rewards.iter().sum::<f64>() - total).abs() < 1e-15);

        let (actions, eval_total) = eval_episode(&env, &actor, 0).unwrap();
        assert_eq!(actions.len(), 3);
        assert!(eval_total.is_finite());
    }

    #[test]
    fn zero_iterations_returns_initialized_networks() {
        let data = dominant_market(30);
        let env_cfg = EnvConfig {
            mu_cost: 0.0,
            lookback: 2,
            episode_len: 10,
            initial_wealth: 1.0,
            action_interval: 1,
        };
        let cfg = PpoConfig { iters: 0, hidden: vec![8], ..PpoConfig::default() };
        let out = train_ppo(&data, None, &env_cfg, &cfg, 9).unwrap();
        assert!(out.history.is_empty());
        let again = train_ppo(&data, None, &env_cfg, &cfg, 9).unwrap();
        assert_eq!(out.actor, again.actor);
        assert_eq!(out.critic, again.critic);
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let data = dominant_market(40);
        let env_cfg = EnvConfig {
            mu_cost: 0.0,
            lookback: 2,
            episode_len: 8,
            initial_wealth: 1.0,
            action_interval: 1,
        };
        let cfg = PpoConfig {
            iters: 3,
            episodes_per_iter: 2,
            minibatch: 8,
            hidden: vec![8],
            ..PpoConfig::default()
        };
        let a = train_ppo(&data, None, &env_cfg, &cfg, 31).unwrap();
        let b = train_ppo(&data, None, &env_cfg, &cfg, 31).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.actor, b.actor);
    }

    #[test]
    fn learns_the_dominant_asset() {
        let data = dominant_market(60);
        let env_cfg = EnvConfig {
            mu_cost: 0.0,
            lookback: 2,
            episode_len: 40,
            initial_wealth: 1.0,
            action_interval: 1,
        };
        let cfg = PpoConfig {
            iters: 150,
            episodes_per_iter: 8,
            lr: 1e-2,
            minibatch: 64,
            hidden: vec![16],
            ..PpoConfig::default()
        };
        let out = train_ppo(&data, None, &env_cfg, &cfg, 7).unwrap();
        assert_eq!(out.history.len(), 150);
        assert!(out.history.iter().all(|h| {
            h.mean_episode_reward.is_finite()
                && h.actor_loss.is_finite()
                && h.critic_loss.is_finite()
        }));

        let norm = Normalization::fit(&data);
        let env = PortfolioEnv::new(&data, None, &norm, &env_cfg).unwrap();
        let (actions, _) = eval_episode(&env, &out.actor, 0).unwrap();
        let mean_w0 =
            actions.iter().map(|a| a.as_slice()[0]).sum::<f64>() / actions.len() as f64;
        assert!(
            mean_w0 >= 0.9,
            "deterministic policy puts only {mean_w0} on the growing asset"
        );
    }

    #[test]
    fn config_validation() {
        let ok = PpoConfig::default();
        assert!(ok.validate().is_ok());
        assert!(PpoConfig { clip_eps: 0.0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { clip_eps: 1.0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { gamma: 1.1, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { lam: -0.1, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { minibatch: 0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { update_epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { lr: 0.0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { episodes_per_iter: 0, ..ok.clone() }.validate().is_err());
        assert!(PpoConfig { grad_clip: 0.0, ..ok }.validate().is_err());
    }
}
