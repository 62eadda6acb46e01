use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>, config: AdamConfig) -> Self {
        let first_moment: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            config,
            second_moment: first_moment.clone(),
            first_moment,
            step_count: 0,
        }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite
    /// or shapes disagree.
    pub fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first_moment[i].shape() != g.shape() {
                return Err(Error::shape("adam_step", format!("parameter {i}")));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let pv = p.as_mut_slice();
            let mv = m.as_mut_slice();
            let vv = v.as_mut_slice();
            for (j, &gj) in g.as_slice().iter().enumerate() {
                mv[j] = beta1 * mv[j] + (1.0 - beta1) * gj;
                vv[j] = beta2 * vv[j] + (1.0 - beta2) * gj * gj;
                let m_hat = mv[j] / bc1;
                let v_hat = vv[j] / bc2;
                pv[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
