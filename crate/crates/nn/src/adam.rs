use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// One bias-corrected Adam update of every trainable parameter. Frozen
/// parameters are left untouched; a trainable one without a gradient is an error.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, config: &AdamConfig) -> Result<()> {
    if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
        return Err(NnError::State(format!("parameter `{}` has no gradient", p.name)));
    }
    store.step += 1;
    let t = store.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (T::of(config.beta1), T::of(config.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - config.beta1), T::of(1.0 - config.beta2));
    let step_size = T::of(config.lr / correction1);
    let inv_sqrt_c2 = T::of(1.0 / correction2.sqrt());
    let eps = T::of(config.eps);
    for p in store.iter_mut().filter(|p| p.trainable) {
        let grad = p.grad.as_ref().expect("checked above");
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = grad[i];
            p.m[i] = b1 * p.m[i] + one_b1 * g;
            p.v[i] = b2 * p.v[i] + one_b2 * g * g;
            let denom = p.v[i].sqrt() * inv_sqrt_c2 + eps;
            values[i] -= step_size * p.m[i] / denom;
        }
    }
    Ok(())
}
