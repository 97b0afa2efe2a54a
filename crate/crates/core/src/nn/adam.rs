use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam moments for one parameter store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
    lr_scale: Vec<f64>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
            lr_scale: vec![1.0; store.len()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, t: u64) {
        self.step = t;
    }

    /// Multiplies the learning rate of selected parameters.
    pub fn set_lr_scale(&mut self, ids: impl IntoIterator<Item = ParamId>, scale: f64) {
        for id in ids {
            self.lr_scale[id.index()] = scale;
        }
    }

    /// Applies one descent step on `trainable` using `grads` (clipped in
    /// place). Nothing is modified when any gradient is non-finite.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &mut Gradients<T>,
        trainable: &[ParamId],
    ) -> Result<()> {
        grads.check_finite(store)?;
        if let Some(max) = self.config.clip_norm {
            // The norm covers only the parameters being updated.
            let norm = trainable
                .iter()
                .filter_map(|&id| grads.get(id))
                .map(Tensor::sq_norm)
                .sum::<T>()
                .sqrt();
            if norm > T::c(max) {
                let s = T::c(max) / norm;
                for &id in trainable {
                    if let Some(g) = grads.get_mut(id) {
                        g.scale_assign(s);
                    }
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (tb1, tb2) = (T::c(b1), T::c(b2));
        let eps = T::c(self.config.eps);
        for &id in trainable {
            let Some(g) = grads.get(id) else { continue };
            let shape = store.get(id).shape().to_vec();
            let m = self.m[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
            let step_size = T::c(self.config.lr * self.lr_scale[id.index()] / bc1);
            let rbc2 = T::c(bc2.sqrt());
            let p = store.get_mut(id);
            for (((w, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = tb1 * *mi + (T::one() - tb1) * gi;
                *vi = tb2 * *vi + (T::one() - tb2) * gi * gi;
                *w -= step_size * *mi / (vi.sqrt() / rbc2 + eps);
            }
        }
        Ok(())
    }
}
