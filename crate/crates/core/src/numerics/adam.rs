use serde::{Deserialize, Serialize};

use super::{Gradients, NumericsError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Exponential decay from `base` at step 0 to `base * final_fraction` at
/// `total` steps.
pub fn decayed_lr(base: f64, final_fraction: f64, step: usize, total: usize) -> f64 {
    if total == 0 || final_fraction == 1.0 {
        return base;
    }
    base * final_fraction.powf(step as f64 / total as f64)
}

/// Adam with bias-corrected moments; one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| params.get(id).map(|_| 0.0))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), NumericsError> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(NumericsError::GradientMismatch);
        }
        if let Some(bad) = grads.first_non_finite() {
            return Err(NumericsError::NonFiniteGradient(params.name(bad).to_string()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = params.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
