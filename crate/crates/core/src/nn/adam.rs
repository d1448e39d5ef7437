use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamEntry, ParamStore, Parameterized};
use crate::nn::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every entry of `params`.
///
/// Gradients are left in place; callers zero them before the next
/// accumulation. Fails without touching any value if a gradient is not finite.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<()> {
    for (name, e) in params.iter() {
        if !e.grad.all_finite() {
            return Err(Error::Training(format!("non-finite gradient in parameter {name}")));
        }
    }
    params.bump_step();
    let t = params.step_count() as i32;
    let b1: T = lit(cfg.beta1);
    let b2: T = lit(cfg.beta2);
    let one_m_b1 = T::one() - b1;
    let one_m_b2 = T::one() - b2;
    let bc1: T = lit(1.0 - cfg.beta1.powi(t));
    let bc2: T = lit(1.0 - cfg.beta2.powi(t));
    let lr: T = lit(cfg.lr);
    let eps: T = lit(cfg.eps);
    for (_, e) in params.iter_mut() {
        let ParamEntry {
            value,
            grad,
            adam_m,
            adam_v,
        } = e;
        let moments = adam_m.data_mut().iter_mut().zip(adam_v.data_mut().iter_mut());
        for ((p, &g), (m, v)) in value.data_mut().iter_mut().zip(grad.data()).zip(moments) {
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam over every store of a multi-network object.
pub fn adam_step_all<T: Scalar, P: Parameterized<T> + ?Sized>(target: &mut P, cfg: &AdamConfig) -> Result<()> {
    for (label, s) in target.stores() {
        for (name, e) in s.iter() {
            if !e.grad.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter {label}.{name}"
                )));
            }
        }
    }
    for (_, s) in target.stores_mut() {
        adam_step(s, cfg)?;
    }
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar, P: Parameterized<T> + ?Sized>(target: &mut P, max_norm: f64) -> f64 {
    let norm = target.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let factor: T = lit(max_norm / norm);
        for (_, s) in target.stores_mut() {
            s.scale_grads(factor);
        }
    }
    norm
}
