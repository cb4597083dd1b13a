use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tape::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter in a store, with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Mat::zeros(p.value.dim())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Mat]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: (store.len(), 1),
                right: (grads.len(), 1),
            });
        }
        for ((id, p), g) in store.iter().zip(grads) {
            if g.dim() != p.value.dim() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.value.dim(),
                    right: g.dim(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} (parameter {})",
                    p.name,
                    id.index()
                )));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |mi, &gi| *mi = beta1 * *mi + (1.0 - beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = beta2 * *vi + (1.0 - beta2) * gi * gi);
            let theta = store.value_mut(id);
            ndarray::Zip::from(theta)
                .and(&*m)
                .and(&*v)
                .for_each(|t, &mi, &vi| {
                    let m_hat = mi / c1;
                    let v_hat = vi / c2;
                    *t -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
