use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative learning-rate decay applied by [`Adam::decay`].
    pub gamma: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gamma: 0.5,
        }
    }
}

/// Adam with bias correction and an exponential learning-rate schedule.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// `lr ← γ·lr`.
    pub fn decay(&mut self) {
        self.lr *= self.config.gamma;
    }

    /// One update from the accumulated gradients; parameters without a
    /// gradient buffer are left alone. The order of `params` must be stable
    /// across calls.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) {
        self.steps += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, p) in params.into_iter().enumerate() {
            if self.m.len() <= i {
                self.m.push(vec![0.0; p.numel()]);
                self.v.push(vec![0.0; p.numel()]);
            }
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            }
            let lr = self.lr;
            for (j, w) in p.data.iter_mut().enumerate() {
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
    }
}
