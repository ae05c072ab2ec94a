use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

/// Uniform `±1/sqrt(fan_in)` initialization.
pub(crate) fn uniform_init<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

/// `y = x W + b` for row-vector batches `x: [B, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::trainable(format!("{name}.weight"), uniform_init(&[input, output], input, rng)),
            bias: Param::trainable(format!("{name}.bias"), uniform_init(&[output], input, rng)),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(Error::shape("linear", &shape, self.weight.tensor.shape()));
        }
        let b = tape.param(&self.bias).reshape(&[1, self.output_width()])?;
        x.matmul(tape.param(&self.weight))?.add(b)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
