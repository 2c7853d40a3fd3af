//! Bias-corrected Adam, used for online dynamics-model learning.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, EngineError, Result};

/// Adam moment estimates for one flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
        }
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients without
/// touching either the parameters or the moment state.
pub fn adam_update(
    params: &[f64],
    grad: &[f64],
    state: &AdamState,
    lr: f64,
) -> Result<(Vec<f64>, AdamState)> {
    check_len("grad", grad.len(), params.len())?;
    check_len("first_moment", state.first_moment.len(), params.len())?;
    if lr <= 0.0 {
        return Err(EngineError::contract("adam lr must be positive"));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(EngineError::numeric("non-finite gradient in adam_update"));
    }

    let mut next = state.clone();
    next.step_count = state.step_count + 1;
    let t = next.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let mut out = params.to_vec();
    for i in 0..params.len() {
        let m = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * grad[i];
        let v = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        next.first_moment[i] = m;
        next.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        out[i] -= lr * m_hat / (v_hat.sqrt() + state.eps_adam);
    }
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let params = vec![0.5, -1.0, 2.0];
        let state = AdamState::new(3);
        let (next, st) = adam_update(&params, &[0.0; 3], &state, 1e-3).unwrap();
        assert_eq!(next, params);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_matches_hand_computed_recurrence() {
        // Fresh state, gradient g: m̂ = g, v̂ = g², Δ = -lr·g/(|g| + ε)
        //                                          = -lr·sign(g)·(1 - ε/(|g|+ε)).
        let g = 0.37;
        let lr = 0.01;
        let state = AdamState::new(1);
        let (next, _) = adam_update(&[1.0], &[g], &state, lr).unwrap();
        let expected = 1.0 - lr * g / (g.abs() + state.eps_adam);
        assert!((next[0] - expected).abs() < 1e-16);
    }

    #[test]
    fn constant_grad_step_approaches_lr_sign() {
        let g = -2.5;
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let lr = 1e-3;
        let mut last_delta = 0.0;
        for _ in 0..500 {
            let prev = params[0];
            let (p, s) = adam_update(&params, &[g], &state, lr).unwrap();
            params = p;
            state = s;
            last_delta = params[0] - prev;
        }
        // Per-coordinate step magnitude approaches lr·sign(-g).
        assert!((last_delta - lr).abs() < 1e-5, "delta = {last_delta}");
    }

    #[test]
    fn non_finite_grad_rejected() {
        let state = AdamState::new(2);
        let err = adam_update(&[0.0, 0.0], &[f64::NAN, 0.0], &state, 1e-3);
        assert!(matches!(err, Err(EngineError::Numeric(_))));
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut state = AdamState::new(1);
        let mut params = vec![0.0];
        for k in 1..=5u64 {
            let (p, s) = adam_update(&params, &[1.0], &state, 1e-3).unwrap();
            params = p;
            state = s;
            assert_eq!(state.step_count, k);
        }
    }
}
