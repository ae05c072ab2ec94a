use rand::Rng;

use super::Linear;
use crate::error::Result;
use crate::tensor::{Module, Param, Scalar, Tape, Var};

/// Hidden width of the memory retrieval perceptron.
pub const MLP_HIDDEN: usize = 1024;

/// linear -> ReLU -> linear with a 1024-unit hidden layer.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(&format!("{name}.hidden"), input, MLP_HIDDEN, rng),
            output: Linear::new(&format!("{name}.output"), MLP_HIDDEN, output, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.hidden.forward(tape, x)?.relu();
        self.output.forward(tape, h)
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.hidden.visit_params(f);
        self.output.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.hidden.visit_params_mut(f);
        self.output.visit_params_mut(f);
    }
}
