//! Adaptive-moment optimizer.

use crate::error::{Error, Result};
use crate::nn::{ParamMut, ParamRef, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState<F> {
    names: Vec<String>,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> OptState<F> {
    pub fn new(params: &[ParamRef<'_, F>]) -> Self {
        Self {
            names: params.iter().map(|p| p.name.to_string()).collect(),
            first: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            second: params.iter().map(|p| vec![F::zero(); p.value.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Frozen tensors and their moments are
/// left untouched.
pub fn adam_step<F: Real>(params: Vec<ParamMut<'_, F>>, state: &mut OptState<F>, lr: f64) -> Result<()> {
    if params.len() != state.names.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} tensors but got {}",
            state.names.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let (b1, b2) = (F::lit(BETA1), F::lit(BETA2));
    let (one_b1, one_b2) = (F::lit(1.0 - BETA1), F::lit(1.0 - BETA2));
    let (inv_c1, inv_c2) = (F::lit(1.0 / c1), F::lit(1.0 / c2));
    let (lr, eps) = (F::lit(lr), F::lit(EPSILON));

    for (i, p) in params.into_iter().enumerate() {
        if p.name != state.names[i] || p.value.len() != state.first[i].len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer slot {i} holds {} but got {}",
                state.names[i], p.name
            )));
        }
        if *p.frozen {
            continue;
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for k in 0..p.value.len() {
            let g = p.grad[k];
            m[k] = b1 * m[k] + one_b1 * g;
            v[k] = b2 * v[k] + one_b2 * g * g;
            let m_hat = m[k] * inv_c1;
            let v_hat = v[k] * inv_c2;
            p.value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
