use std::collections::BTreeMap;

use super::{Module, Scalar};
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they survive a checkpoint round trip.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(1e-5)
    }
}

impl<T: Scalar> AdamState<T> {
    /// Betas 0.5 / 0.999 and epsilon 1e-8.
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, (Vec<T>, Vec<T>)> {
        &self.moments
    }

    /// Restores persisted state; used by checkpoint loading.
    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, (Vec<T>, Vec<T>)>) {
        self.step = step;
        self.moments = moments;
    }

    /// One update over every trainable parameter of `modules`, then clears
    /// their gradients. Fails before touching anything if a trainable
    /// parameter has no gradient buffer.
    pub fn step(&mut self, modules: &mut [&mut dyn Module<T>]) -> Result<()> {
        let mut groups: Vec<(&mut (dyn Module<T> + '_), f64)> = modules.iter_mut().map(|m| (&mut **m, 1.0)).collect();
        self.step_groups(&mut groups)
    }

    /// Like [`AdamState::step`], with each module's learning rate multiplied
    /// by its factor. All groups share one step counter.
    pub fn step_groups(&mut self, groups: &mut [(&mut (dyn Module<T> + '_), f64)]) -> Result<()> {
        for (m, _) in groups.iter() {
            let mut missing = None;
            m.visit_params(&mut |p| {
                if missing.is_none() && p.is_trainable() && p.tensor.grad().is_none() {
                    missing = Some(p.name().to_owned());
                }
            });
            if let Some(name) = missing {
                return Err(Error::contract(format!("parameter {name} has no gradient")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - T::of(self.beta1.powi(t));
        let bc2 = T::one() - T::of(self.beta2.powi(t));
        let eps = T::of(self.epsilon);
        for (m, factor) in groups.iter_mut() {
            let lr = T::of(self.learning_rate * *factor);
            m.visit_params_mut(&mut |p| {
                if !p.is_trainable() {
                    return;
                }
                let grad = p.tensor.take_grad().expect("checked above");
                let n = grad.len();
                let (m1, m2) = self
                    .moments
                    .entry(p.name().to_owned())
                    .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
                let data = p.tensor.data_mut();
                for i in 0..n {
                    let g = grad[i];
                    m1[i] = b1 * m1[i] + (T::one() - b1) * g;
                    m2[i] = b2 * m2[i] + (T::one() - b2) * g * g;
                    let mhat = m1[i] / bc1;
                    let vhat = m2[i] / bc2;
                    data[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
