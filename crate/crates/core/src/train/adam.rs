use crate::error::{LatticeError, Result};
use crate::model::ParameterSet;

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut OptimizerState, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
    if !params.same_shapes(grads) || !params.same_shapes(&state.m) {
        return Err(LatticeError::Shape(
            "parameter, gradient and moment shapes differ".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.eps);
    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut());
    for (((p, g), m), v) in blocks {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
