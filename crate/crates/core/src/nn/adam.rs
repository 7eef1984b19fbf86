use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Param, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Gradients are
/// zeroed afterwards.
pub fn adam_step<F: Real>(params: &mut [&mut Param<F>], lr: f64, cfg: &AdamConfig, t: u64) {
    assert!(t >= 1, "adam step counter starts at 1");
    let correction1 = 1.0 - cfg.beta1.powi(t as i32);
    let correction2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (c1, c2) = (F::of(correction1), F::of(correction2));
    let (lr, eps) = (F::of(lr), F::of(cfg.eps));
    for p in params.iter_mut() {
        let Param {
            value,
            grad,
            adam_m,
            adam_v,
        } = &mut **p;
        Zip::from(value)
            .and(&mut *grad)
            .and(adam_m)
            .and(adam_v)
            .for_each(|w, g, m, v| {
                *m = b1 * *m + (F::one() - b1) * *g;
                *v = b2 * *v + (F::one() - b2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = F::zero();
            });
    }
}

/// Adam with its own step counter.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0 }
    }

    pub fn step<F: Real>(&mut self, params: &mut [&mut Param<F>], lr: f64) {
        self.t += 1;
        adam_step(params, lr, &self.config, self.t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        for g in [3.0, -0.02, 1e4] {
            let mut p = Param::new(array![[1.0f64]]);
            p.grad[[0, 0]] = g;
            adam_step(&mut [&mut p], 0.01, &AdamConfig::default(), 1);
            let delta = p.value[[0, 0]] - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-6, "g={g} delta={delta}");
            assert_eq!(p.grad[[0, 0]], 0.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Param::new(array![[0.3f64, -1.2]]);
        let mut opt = Adam::default();
        for _ in 0..5 {
            opt.step(&mut [&mut p], 0.1);
        }
        assert_eq!(p.value, array![[0.3, -1.2]]);
    }

    /// Independent scalar Adam trace on f(w) = w^2.
    fn scripted_trace(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn three_steps_on_quadratic_match_scripted_trace() {
        let expected = scripted_trace(1.0, 0.1, 3);
        // frozen from the scripted trace above
        let frozen = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        for (e, f) in expected.iter().zip(frozen) {
            assert!((e - f).abs() < 1e-10, "{e} vs {f}");
        }
        let mut p = Param::new(array![[1.0f64]]);
        let mut opt = Adam::default();
        for (step, want) in expected.iter().enumerate() {
            p.grad[[0, 0]] = 2.0 * p.value[[0, 0]];
            opt.step(&mut [&mut p], 0.1);
            assert!(
                (p.value[[0, 0]] - want).abs() < 1e-10,
                "step {step}: {} vs {want}",
                p.value[[0, 0]]
            );
        }
    }
}
