use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Panics if `params`, `grads` and the state disagree in length.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: &AdamParams) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/state length mismatch");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = vec![0.3, -1.0];
        let mut s = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamParams::default());
        }
        assert_eq!(p, vec![0.3, -1.0]);
        assert_eq!(s.step(), 10);
    }

    #[test]
    fn first_step_magnitude() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = −lr / (1 + ε).
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &AdamParams::default());
        let want = -0.01 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15, "{}", p[0]);
        assert!((p[0] + 0.00999999).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let mut prev = p[0];
        for _ in 0..500 {
            adam_step(&mut p, &[2.5], &mut s, &AdamParams::default());
            assert!(p[0] < prev);
            prev = p[0];
        }
        // Constant gradients give m̂/√v̂ = 1 at every step.
        assert!((p[0] + 500.0 * 0.01).abs() < 1e-6);
    }

    #[test]
    #[should_panic]
    fn length_mismatch_panics() {
        let mut p = vec![0.0; 2];
        adam_step(&mut p, &[1.0], &mut AdamState::new(2), &AdamParams::default());
    }
}
