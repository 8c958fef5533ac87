use std::collections::BTreeMap;

use super::{NnError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment buffers for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub shape: Vec<usize>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name and created on first use, so parameters added after a restore start
/// from zero moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn from_parts(config: AdamWConfig, step: u64, moments: BTreeMap<String, Moments>) -> Self {
        AdamW { config, step, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }

    /// Names in the state must exist in `store` with the same shape.
    pub fn check_against(&self, store: &ParamStore) -> Result<(), NnError> {
        for (name, mo) in &self.moments {
            let p = store
                .by_name(name)
                .ok_or_else(|| NnError::StateMismatch(format!("state for unknown parameter {name:?}")))?;
            if p.value.shape() != mo.shape.as_slice() || mo.m.len() != p.value.numel() || mo.v.len() != mo.m.len() {
                return Err(NnError::StateMismatch(format!(
                    "{name:?}: state shape {:?}, parameter shape {:?}",
                    mo.shape,
                    p.value.shape()
                )));
            }
            if p.frozen {
                return Err(NnError::StateMismatch(format!("state for frozen parameter {name:?}")));
            }
        }
        Ok(())
    }

    /// One update of every trainable parameter from its accumulated gradient.
    /// Frozen parameters are not touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        self.check_against(store)?;
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in store.iter_mut() {
            if p.frozen {
                continue;
            }
            let mo = self.moments.entry(p.name.clone()).or_insert_with(|| Moments {
                shape: p.value.shape().to_vec(),
                m: vec![0.0; p.value.numel()],
                v: vec![0.0; p.value.numel()],
            });
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                value[i] *= 1.0 - lr * weight_decay;
                mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g;
                mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g * g;
                let m_hat = mo.m[i] / bc1;
                let v_hat = mo.v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
