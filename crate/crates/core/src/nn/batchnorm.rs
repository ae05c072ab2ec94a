use crate::error::{Error, Result};
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::trainable(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::trainable(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.tensor.numel()
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the running
    /// estimates only.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape("batchnorm", &shape, &[self.channels()]));
        }
        let (gamma, beta) = (tape.param(&self.gamma), tape.param(&self.beta));
        match mode {
            Mode::Train => {
                if shape[0] < 2 {
                    return Err(Error::contract("batchnorm in train mode needs a batch of at least 2"));
                }
                let (y, mean, var) = x.batch_norm(gamma, beta, T::of(self.eps))?;
                let count = (shape[0] * shape[2] * shape[3]) as f64;
                let unbias = T::of(count / (count - 1.0));
                let mom = T::of(self.momentum);
                let rm = self.running_mean.tensor.data_mut();
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - mom) * *r + mom * m;
                }
                let rv = self.running_var.tensor.data_mut();
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - mom) * *r + mom * v * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let eps = T::of(self.eps);
                let inv_std: Vec<T> = self
                    .running_var
                    .tensor
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                x.channel_affine(gamma, beta, self.running_mean.tensor.data(), &inv_std)
            }
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
