//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update on a single parameter buffer. `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::dim(format!(
            "adam buffers disagree: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if step == 0 {
        return Err(Error::contract("adam step index must be >= 1"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam over a named parameter store. Moment buffers are keyed by parameter
/// name so checkpoint/restore of the store does not invalidate them.
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one step using the gradients in `grads` (keyed by parameter
    /// name). Parameters without a gradient entry are left untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        self.step += 1;
        for (name, grad) in grads {
            let t = params
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("gradient for unknown parameter {name}")))?;
            let n = t.len();
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            adam_update(t.data_mut(), grad, &mut mom.m, &mut mom.v, self.step, &self.cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.5];
        let g = vec![0.0; 3];
        let mut m = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        adam_update(&mut p, &g, &mut m, &mut v, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first update magnitude ~lr.
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = vec![1.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &cfg).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6, "got {}", p[0]);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = ParamStore::new();
            params.insert("w", Tensor::from_vec(vec![2], vec![0.5, -0.25]).unwrap());
            let mut adam = Adam::new(AdamConfig::default());
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), vec![0.3, -0.7]);
            for _ in 0..10 {
                adam.step(&mut params, &grads).unwrap();
            }
            params.get("w").unwrap().data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
