//! Layer primitives: 4x4 stride-2 convolutions in both directions, batch
//! normalization, dropout, the LSTM cell and the two-layer perceptron.

mod batchnorm;
mod conv;
mod linear;
mod lstm;
mod mlp;

use rand::Rng;

pub use batchnorm::{BatchNorm2d, Mode};
pub use conv::{Conv2d, Direction, CONV_INIT_STD};
pub use linear::Linear;
pub use lstm::{LstmCarry, LstmCell, LSTM_HIDDEN};
pub use mlp::{Mlp, MLP_HIDDEN};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so the
/// expectation is preserved. With `rng = None` (dropout disabled) or
/// `rate = 0` the input is returned unchanged.
pub fn dropout<'t, T: Scalar>(x: Var<'t, T>, rate: f64, rng: Option<&mut impl Rng>) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.mask(mask)
}
