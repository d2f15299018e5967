use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: IndexMap<String, Tensor<T>>,
    second: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, first: IndexMap::new(), second: IndexMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `stores` that has a gradient.
    pub fn update(
        &mut self,
        stores: &mut [&mut ParamStore<T>],
        grads: &IndexMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::lit(c.learning_rate);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let eps = T::lit(c.epsilon);
        let correction1 = T::one() - b1.powi(t);
        let correction2 = T::one() - b2.powi(t);
        for store in stores.iter_mut() {
            for (name, param) in store.iter_mut() {
                let Some(grad) = grads.get(name) else { continue };
                if grad.shape() != param.shape() {
                    return Err(TensorError::shape(
                        "adam",
                        format!("gradient for `{name}` has shape {:?}", grad.shape()),
                    ));
                }
                let m = self
                    .first
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
                let v = self
                    .second
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
                for (((p, &g), m), v) in param
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpointing.
    pub fn state(&self) -> (u64, &IndexMap<String, Tensor<T>>, &IndexMap<String, Tensor<T>>) {
        (self.step, &self.first, &self.second)
    }

    pub fn from_state(
        config: AdamConfig,
        step: u64,
        first: IndexMap<String, Tensor<T>>,
        second: IndexMap<String, Tensor<T>>,
    ) -> Self {
        Adam { config, step, first, second }
    }
}
