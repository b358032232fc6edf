//! Parameter-space optimizers shared by the trainers: Adam with a maximize
//! switch, plus global gradient-norm clipping.

use crate::policy_net::MlpParams;

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
/// `step` applies one update in place; pass `maximize = true` for gradient
/// ascent objectives.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: MlpParams,
    v: MlpParams,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, shape: &MlpParams) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shape.zeros_like(),
            v: shape.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpParams, maximize: bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let sign = if maximize { 1.0 } else { -1.0 };
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales the gradient down so its global L2 norm does not exceed
/// `max_norm`; returns the pre-clip norm. A no-op for gradients already
/// inside the ball.
pub fn clip_grad_norm(grad: &mut MlpParams, max_norm: f64) -> f64 {
    let norm = grad.l2_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
