//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters. Defaults follow the training recipe:
/// lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            lr: T::from_f64(0.001),
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }
}

impl<T: Scalar> AdamParams<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamParams { lr, ..Self::default() }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero-initialized state matching the parameter list.
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over all parameters.
///
/// `grads[i]` must match `params[i]` in element count; the state must have
/// been built for this parameter list.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    hp: &AdamParams<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step got {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() {
            return Err(Error::Shape(format!(
                "adam_step param {} has {} elements but gradient has {}",
                i,
                p.numel(),
                g.len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let bc1 = one - hp.beta1.powi(t);
    let bc2 = one - hp.beta2.powi(t);
    for i in 0..params.len() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = &mut params[i].data;
        let g = &grads[i];
        for j in 0..p.len() {
            m[j] = hp.beta1 * m[j] + (one - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (one - hp.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = params[0].data.clone();
        let mut state = AdamState::new(&params);
        let grads = vec![vec![0.0; 3]];
        adam_step(&mut params, &grads, &mut state, &AdamParams::default()).unwrap();
        assert_eq!(params[0].data, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut params = vec![Tensor::new(vec![1], vec![0.0f64]).unwrap()];
        let mut state = AdamState::new(&params);
        let hp = AdamParams::default();
        adam_step(&mut params, &[vec![1.0]], &mut state, &hp).unwrap();
        // Bias-corrected first step: m_hat = v_hat = 1, so delta = -lr / (1 + eps).
        let want = -0.001 / (1.0 + 1e-8);
        assert!((params[0].data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn mismatched_gradient_length_is_an_error() {
        let mut params = vec![Tensor::new(vec![2], vec![0.0f64; 2]).unwrap()];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[vec![1.0; 3]], &mut state, &AdamParams::default());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        // Minimize (p - 3)^2 from p = 0 with analytic gradients.
        let mut params = vec![Tensor::new(vec![1], vec![0.0f64]).unwrap()];
        let mut state = AdamState::new(&params);
        let hp = AdamParams::with_lr(0.05);
        for _ in 0..2000 {
            let g = 2.0 * (params[0].data[0] - 3.0);
            adam_step(&mut params, &[vec![g]], &mut state, &hp).unwrap();
        }
        assert!((params[0].data[0] - 3.0).abs() < 1e-3, "got {}", params[0].data[0]);
    }
}
