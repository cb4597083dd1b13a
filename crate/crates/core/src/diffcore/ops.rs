use rand::Rng;

use super::tape::{Mat, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: in training mode each coordinate is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Mat::from_shape_simple_fn(tape.shape(x), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

/// `x · Wᵀ + b` for a batch of row vectors.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul_bt(x, weight)?;
    tape.add_row(xw, bias)
}
