use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{ParamKey, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `t` is the step
/// number after incrementing, so the first call passes 1.
pub fn adam_update<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, cfg: &AdamConfig) {
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(lr), T::of(cfg.epsilon));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Moments for every array of a [`ParamStore`], allocated on first use.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub t: u64,
    moments: HashMap<ParamKey, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Applies `grads` to the trainable arrays of `store`. Arrays without a
    /// gradient still advance their moments as if the gradient were zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamKey, Tensor<T>>, lr: f64) {
        self.t += 1;
        for key in store.keys().collect::<Vec<_>>() {
            if !store.entry(key).trainable {
                continue;
            }
            let param = store.get_mut(key);
            let (m, v) = self
                .moments
                .entry(key)
                .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
            match grads.get(&key) {
                Some(g) => {
                    adam_update(param.data_mut(), g.data(), m.data_mut(), v.data_mut(), self.t, lr, &self.config)
                }
                None => {
                    let zeros = vec![T::zero(); param.len()];
                    adam_update(param.data_mut(), &zeros, m.data_mut(), v.data_mut(), self.t, lr, &self.config)
                }
            }
        }
    }

    pub fn moments(&self, key: ParamKey) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(&key).map(|(m, v)| (m, v))
    }
}
