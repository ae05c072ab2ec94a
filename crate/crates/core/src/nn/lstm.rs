use rand::Rng;

use super::linear::uniform_init;
use crate::error::{Error, Result};
use crate::tensor::{Module, Param, Scalar, Tape, Tensor, Var};

/// Hidden width of the memory controllers' LSTMs.
pub const LSTM_HIDDEN: usize = 100;

/// Single LSTM cell. Gate blocks in the fused weights are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell<T> {
    pub w_input: Param<T>,
    pub w_hidden: Param<T>,
    pub bias: Param<T>,
}

/// Hidden and cell state as plain values, carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCarry<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> LstmCarry<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[1, hidden]),
            c: Tensor::zeros(&[1, hidden]),
        }
    }
}

impl<T: Scalar> LstmCell<T> {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_input: Param::trainable(format!("{name}.w_input"), uniform_init(&[input, 4 * hidden], input, rng)),
            w_hidden: Param::trainable(format!("{name}.w_hidden"), uniform_init(&[hidden, 4 * hidden], hidden, rng)),
            bias: Param::trainable(format!("{name}.bias"), uniform_init(&[4 * hidden], hidden, rng)),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_input.tensor.shape()[0]
    }

    pub fn hidden_width(&self) -> usize {
        self.w_hidden.tensor.shape()[0]
    }

    /// `c' = f*c + i*g`, `h' = o*tanh(c')` for `x: [B, in]`, `h, c: [B, hidden]`.
    pub fn step<'t>(
        &self,
        tape: &'t Tape<T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
        c: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let hid = self.hidden_width();
        let (xs, hs, cs) = (x.shape(), h.shape(), c.shape());
        if xs.len() != 2 || xs[1] != self.input_width() {
            return Err(Error::shape("lstm input", &xs, self.w_input.tensor.shape()));
        }
        if hs != [xs[0], hid] || cs != hs {
            return Err(Error::shape("lstm state", &hs, &cs));
        }
        let bias = tape.param(&self.bias).reshape(&[1, 4 * hid])?;
        let pre = x
            .matmul(tape.param(&self.w_input))?
            .add(h.matmul(tape.param(&self.w_hidden))?)?
            .add(bias)?;
        let input_gate = pre.slice(1, 0, hid)?.sigmoid();
        let forget_gate = pre.slice(1, hid, hid)?.sigmoid();
        let candidate = pre.slice(1, 2 * hid, hid)?.tanh();
        let output_gate = pre.slice(1, 3 * hid, hid)?.sigmoid();
        let c_next = forget_gate.mul(c)?.add(input_gate.mul(candidate)?)?;
        let h_next = output_gate.mul(c_next.tanh())?;
        Ok((h_next, c_next))
    }
}

impl<T: Scalar> Module<T> for LstmCell<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.w_input);
        f(&self.w_hidden);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}
