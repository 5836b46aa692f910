use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f32], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = BETA1 * state.m[i] as f64 + (1.0 - BETA1) * g;
        let v = BETA2 * state.v[i] as f64 + (1.0 - BETA2) * g * g;
        state.m[i] = m as f32;
        state.v[i] = v as f32;
        if m == 0.0 {
            continue;
        }
        let update = lr * (m / bc1) / ((v / bc2).sqrt() + EPSILON);
        params[i] = (params[i] as f64 - update) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3f32, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g/|g|.
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        assert!((p[0] as f64 - 0.9).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_agree() {
        let run = || {
            let mut p = vec![0.5f32, 0.25];
            let mut s = AdamState::new(2);
            for _ in 0..2 {
                adam_step(&mut p, &[0.2, -0.7], &mut s, 0.05).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut [0.0, 1.0], &[0.0, 0.0], &mut s, 0.1).is_err());
    }
}
