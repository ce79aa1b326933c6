use super::spec::ParamVector;
use crate::error::{Error, Result};

/// Heavy-ball momentum buffer for SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffer: Vec<f64>,
    pub momentum_coeff: f64,
}

impl OptimizerState {
    pub fn new(len: usize, momentum_coeff: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum_coeff) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum_coeff}"
            )));
        }
        Ok(OptimizerState {
            momentum_buffer: vec![0.0; len],
            momentum_coeff,
        })
    }
}

/// `buf <- m*buf + g; w <- w - lr*buf`.
pub fn sgd_step(params: &mut ParamVector, grad: &[f64], lr: f64, state: &mut OptimizerState) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if state.momentum_buffer.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: state.momentum_buffer.len(),
        });
    }
    let m = state.momentum_coeff;
    for ((w, b), g) in params
        .values
        .iter_mut()
        .zip(state.momentum_buffer.iter_mut())
        .zip(grad)
    {
        *b = m * *b + g;
        *w -= lr * *b;
    }
    Ok(())
}
