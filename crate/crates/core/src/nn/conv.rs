use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

/// Standard deviation of the Gaussian used for convolution weights.
pub const CONV_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Stride-2 convolution halving `H, W`.
    Down,
    /// Transposed convolution doubling `H, W`.
    Up,
}

/// 4x4 convolution with stride 2 and padding 1.
///
/// Down layers store weights as `[out, in, 4, 4]`. Up layers store them as
/// `[in, out, 4, 4]`, the layout of the down-convolution they are the adjoint
/// of, so that one tensor can drive both directions.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    direction: Direction,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, input: usize, output: usize, direction: Direction, rng: &mut impl Rng) -> Self {
        let shape = match direction {
            Direction::Down => [output, input, 4, 4],
            Direction::Up => [input, output, 4, 4],
        };
        let normal = Normal::new(0.0, CONV_INIT_STD).expect("positive std");
        let data = (0..shape.iter().product()).map(|_| T::of(normal.sample(rng))).collect();
        Self {
            weight: Param::trainable(format!("{name}.weight"), Tensor::from_vec(&shape, data).expect("shape")),
            bias: Param::trainable(format!("{name}.bias"), Tensor::zeros(&[output])),
            direction,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn in_channels(&self) -> usize {
        match self.direction {
            Direction::Down => self.weight.tensor.shape()[1],
            Direction::Up => self.weight.tensor.shape()[0],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.tensor.numel()
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (w, b) = (tape.param(&self.weight), tape.param(&self.bias));
        match self.direction {
            Direction::Down => x.conv_down(w, b),
            Direction::Up => x.conv_up(w, b),
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
