//! Adam with decoupled weight decay, stepping a [`ParamSet`] in registration
//! order from the gradients accumulated on the parameters.

use super::params::ParamSet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment buffers per parameter plus a strictly
/// increasing step counter.
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let moments = params
            .iter()
            .map(|(_, v)| (vec![0.0; v.numel()], vec![0.0; v.numel()]))
            .collect();
        Adam {
            config,
            step_count: 0,
            moments,
        }
    }

    /// One update over all parameters. Parameters with no accumulated
    /// gradient are treated as zero-gradient (their moments still decay).
    /// A non-finite gradient entry aborts with the parameter's name.
    pub fn step(&mut self, params: &ParamSet) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for ((name, value), (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = value.grad().unwrap_or_else(|| vec![0.0; value.numel()]);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter `{name}`"),
                });
            }
            let mut data = value.to_vec();
            for i in 0..data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon))
                    + c.learning_rate * c.weight_decay * data[i];
            }
            value.set_data(&data);
        }
        Ok(())
    }

    /// Moment buffers in parameter registration order (for checkpointing).
    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    pub fn restore_moments(&mut self, moments: Vec<(Vec<f64>, Vec<f64>)>, step_count: u64) {
        assert_eq!(moments.len(), self.moments.len(), "moment count mismatch");
        self.moments = moments;
        self.step_count = step_count;
    }
}
