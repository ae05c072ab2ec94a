use std::sync::atomic::{AtomicU64, Ordering};

use super::{Gradients, Scalar, Tensor};
use crate::error::Result;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique handle linking a tape leaf back to its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named tensor owned by a layer. Frozen buffers (batch-norm running
/// statistics) never receive gradients but are persisted in checkpoints.
/// Trainability belongs to the parameter, so replacing `tensor` wholesale
/// keeps it.
#[derive(Debug, Clone)]
pub struct Param<T> {
    id: ParamId,
    name: String,
    trainable: bool,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn trainable(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            trainable: true,
            tensor: tensor.with_requires_grad(true),
        }
    }

    pub fn buffer(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            trainable: false,
            tensor: tensor.with_requires_grad(false),
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    fn sync_flag(&mut self) {
        if self.tensor.requires_grad() != self.trainable {
            self.tensor.set_requires_grad(self.trainable);
        }
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Adds the gradients recorded for this module's parameters. Trainable
    /// parameters the loss never reached end up with a zero gradient.
    fn accumulate_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        let mut result = Ok(());
        self.visit_params_mut(&mut |p| {
            if result.is_err() || !p.is_trainable() {
                return;
            }
            p.sync_flag();
            match grads.param(p.id()) {
                Some(g) => result = p.tensor.accumulate_grad(g),
                None => p.tensor.touch_grad(),
            }
        });
        result
    }

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.tensor.clear_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.is_trainable() {
                n += p.tensor.numel();
            }
        });
        n
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        if let Some(m) = self {
            m.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_params_mut(f);
        }
    }
}
