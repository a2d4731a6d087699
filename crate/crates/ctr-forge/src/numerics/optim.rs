//! Adam optimizer step and the step-decay learning-rate schedule.

use super::param::Parameter;
use crate::error::{CtrError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update with bias correction. The value is updated in place and
/// `step_count` incremented; the gradient is left untouched (clearing it is
/// the caller's separate call).
pub fn adam_step(p: &mut Parameter, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    if !p.grad.is_finite() {
        return Err(CtrError::Training {
            param: p.name.clone(),
            step: p.step_count,
            reason: "non-finite gradient".into(),
        });
    }
    let t = p.step_count + 1;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    let value = p.value.data_mut();
    let grad = p.grad.data();
    let m = p.m.data_mut();
    let v = p.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    p.step_count = t;
    Ok(())
}

/// Step-decay schedule: `lr0 * gamma^floor(epoch / step_size)`.
pub fn steplr(lr0: f64, epoch: usize, step_size: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi((epoch / step_size) as i32)
}
