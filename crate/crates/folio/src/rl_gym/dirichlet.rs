//! Dirichlet policy head: concentrations from logits, sampling, densities,
//! and the density gradient used by the PPO update.

use super::GymError;
use crate::analytics::WeightVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

/// Sampled weights are clamped away from the boundary by this floor so the
/// log-density stays finite.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw logits to Dirichlet concentrations `softplus(z) + 1`, which keeps
/// every component at least 1 and the distribution unimodal.
pub fn concentration(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| softplus(z) + 1.0).collect()
}

/// `d concentration / d logit`, component-wise.
pub fn concentration_jacobian(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}

fn check_alpha(alpha: &[f64]) -> Result<(), GymError> {
    if alpha.is_empty() {
        return Err(GymError::BadConfig("empty concentration vector".into()));
    }
    for &a in alpha {
        if !(a.is_finite() && a > 0.0) {
            return Err(GymError::BadConfig(format!("concentration must be positive, got {a}")));
        }
    }
    Ok(())
}

/// Draws one weight vector from Dirichlet(alpha) by normalizing independent
/// Gamma(alpha_i, 1) variates, then nudges it strictly inside the simplex.
pub fn sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<WeightVector, GymError> {
    check_alpha(alpha)?;
    let mut draws = Vec::with_capacity(alpha.len());
    for &a in alpha {
        let g = Gamma::new(a, 1.0)
            .map_err(|e| GymError::BadConfig(format!("gamma shape {a}: {e}")))?;
        draws.push(g.sample(rng));
    }
    let sum: f64 = draws.iter().sum();
    if !(sum.is_finite() && sum > 0.0) {
        return Err(GymError::NonFinite("dirichlet normalizer"));
    }
    let mut w: Vec<f64> = draws.iter().map(|g| g / sum).collect();
    let mut total = 0.0;
    for x in &mut w {
        if *x < WEIGHT_FLOOR {
            *x = WEIGHT_FLOOR;
        }
        total += *x;
    }
    for x in &mut w {
        *x /= total;
    }
    Ok(WeightVector::new(w)?)
}

/// Distribution mean `alpha / sum(alpha)`: the deterministic action used for
/// evaluation.
pub fn mean_action(alpha: &[f64]) -> Result<WeightVector, GymError> {
    check_alpha(alpha)?;
    let sum: f64 = alpha.iter().sum();
    Ok(WeightVector::new(alpha.iter().map(|&a| a / sum).collect())?)
}

/// Log-density of Dirichlet(alpha) at `w`:
/// `ln G(sum a) - sum ln G(a_i) + sum (a_i - 1) ln w_i`.
pub fn log_density(alpha: &[f64], w: &[f64]) -> Result<f64, GymError> {
    check_alpha(alpha)?;
    if alpha.len() != w.len() {
        return Err(GymError::LengthMismatch {
            context: "dirichlet density",
            left: alpha.len(),
            right: w.len(),
        });
    }
    let mut total = ln_gamma(alpha.iter().sum());
    for (&a, &x) in alpha.iter().zip(w) {
        if !(x > 0.0 && x < 1.0 + 1e-12) {
            return Err(GymError::BadAction(format!("weight {x} outside the open simplex")));
        }
        total -= ln_gamma(a);
        total += (a - 1.0) * x.ln();
    }
    if !total.is_finite() {
        return Err(GymError::NonFinite("dirichlet log-density"));
    }
    Ok(total)
}

/// Gradient of [`log_density`] in the concentrations:
/// `psi(sum a) - psi(a_i) + ln w_i`.
pub fn log_density_grad(alpha: &[f64], w: &[f64]) -> Result<Vec<f64>, GymError> {
    check_alpha(alpha)?;
    if alpha.len() != w.len() {
        return Err(GymError::LengthMismatch {
            context: "dirichlet density gradient",
            left: alpha.len(),
            right: w.len(),
        });
    }
    let psi_total = digamma(alpha.iter().sum());
    alpha
        .iter()
        .zip(w)
        .map(|(&a, &x)| {
            if !(x > 0.0) {
                return Err(GymError::BadAction(format!("weight {x} outside the open simplex")));
            }
            Ok(psi_total - digamma(a) + x.ln())
        })
        .collect()
}
