use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clip applied before the moment update; `<= 0` disables it.
    pub grad_clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Global Euclidean norm of `g`.
pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One bias-corrected adaptive-moment update of `params` in place. Returns
/// the gradient norm before clipping.
pub fn optimizer_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<f64> {
    if params.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(Error::shape(
            "optimizer state, parameters and gradient differ in length",
        ));
    }
    let norm = global_norm(grad);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let clip = if config.grad_clip_norm > 0.0 && norm > config.grad_clip_norm {
        config.grad_clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for k in 0..params.len() {
        let g = grad[k] * clip;
        state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
        state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g;
        let mhat = state.m[k] / bc1;
        let vhat = state.v[k] / bc2;
        params[k] -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        st.m = vec![0.5, 0.5];
        st.v = vec![0.25, 0.25];
        st.step = 3;
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        optimizer_step(&mut p, &[0.0, 0.0], &mut st, &cfg).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert!((st.m[0] - 0.45).abs() < 1e-15);
        assert!((st.v[0] - 0.25 * 0.999).abs() < 1e-15);

        // zero moments and zero gradient: no motion with a positive rate either
        let mut st = AdamState::new(2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig {
            grad_clip_norm: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            optimizer_step(&mut p, &[0.37], &mut st, &cfg).unwrap();
            last = before - p[0];
        }
        assert!((last - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate + 1e-10);
    }

    #[test]
    fn clipping_scales_to_unit_norm() {
        // with beta1 = 0 and beta2 = 0 the update is lr * g / (|g| + eps), so
        // inspect the first moment instead
        let cfg = AdamConfig {
            beta1: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(2);
        let norm = optimizer_step(&mut p, &[6.0, 8.0], &mut st, &cfg).unwrap();
        assert_eq!(norm, 10.0);
        assert!((global_norm(&st.m) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        assert!(optimizer_step(&mut p, &[f64::NAN], &mut st, &AdamConfig::default()).is_err());
        assert!(optimizer_step(&mut p, &[1.0, 2.0], &mut st, &AdamConfig::default()).is_err());
    }
}
