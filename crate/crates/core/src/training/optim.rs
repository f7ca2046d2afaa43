use serde::{Deserialize, Serialize};

use crate::backbone::{EntryKind, WeightStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of every param entry. `grads` is aligned
/// with the store's entries; a `None` gradient counts as zero.
pub fn adam_step<T: Real>(store: &mut WeightStore<T>, grads: &[Option<Tensor<T>>], lr: f64, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::invalid("adam_step", format!("{} gradients for {} entries", grads.len(), store.len())));
    }
    for (e, g) in store.entries().iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != e.value.shape() {
                return Err(Error::ShapeMismatch { op: "adam_step", left: e.value.shape().to_vec(), right: g.shape().to_vec() });
            }
            if let Some(index) = g.first_non_finite() {
                return Err(Error::NonFinite { context: format!("gradient of `{}`", e.name), index });
            }
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(cfg.eps));
    for (e, g) in store.entries_mut().iter_mut().zip(grads) {
        if e.kind != EntryKind::Param {
            continue;
        }
        let shape = e.value.shape().to_vec();
        let (m, v) = e.moments.get_or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
        let zero = T::zero();
        for k in 0..e.value.len() {
            let gk = g.as_ref().map_or(zero, |g| g.data()[k]);
            let mk = b1 * m.data()[k] + (T::one() - b1) * gk;
            let vk = b2 * v.data()[k] + (T::one() - b2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + eps);
            e.value.data_mut()[k] = e.value.data()[k] - update;
        }
    }
    Ok(())
}

/// Step-decay schedule: `base · factor^⌊epoch / every⌋`, rounded to 15
/// significant digits so decimal schedules land on the exact literals
/// (1e-3, 1e-4, ...).
pub fn learning_rate(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    let k = (epoch / every.max(1)) as i32;
    let raw = base * factor.powi(k);
    format!("{raw:.14e}").parse().expect("formatted float parses")
}
