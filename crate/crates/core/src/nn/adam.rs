use serde::{Deserialize, Serialize};

use super::{cast, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        AdamState { config, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params], t: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2): (T, T) = (cast(c.beta1), cast(c.beta2));
    let one = T::one();
    let correction1: T = cast(1.0 - c.beta1.powi(state.t as i32));
    let correction2: T = cast(1.0 - c.beta2.powi(state.t as i32));
    let (lr, eps): (T, T) = (cast(c.lr), cast(c.epsilon));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_and_zero_lr_are_identity() {
        let mut p = vec![1.5f64, -2.0];
        let mut s = AdamState::new(AdamConfig::default(), 2);
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        let mut s = AdamState::new(AdamConfig::with_lr(0.0), 2);
        adam_step(&mut p, &[3.0, -7.0], &mut s).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(AdamConfig::with_lr(1e-3), 1);
        adam_step(&mut p, &[10.0], &mut s).unwrap();
        assert!((p[0] + 1e-3 * 10.0 / (10.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let a = 3.0f64;
        for lr in [1e-3, 0.1, 1.0, 5.0] {
            let mut theta = vec![0.0];
            let before = 0.5 * (theta[0] - a).powi(2);
            let mut s = AdamState::new(AdamConfig::with_lr(lr), 1);
            let g = [theta[0] - a];
            adam_step(&mut theta, &g, &mut s).unwrap();
            assert!(0.5 * (theta[0] - a).powi(2) < before, "lr {lr}");
        }
    }
}
